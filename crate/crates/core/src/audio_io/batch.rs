use serde::{Deserialize, Serialize};

use crate::audio_io::AudioSample;
use crate::error::{Error, Result};

/// Kernel widths and strides of the convolutional feature encoder; enough to
/// map sample counts to latent frame counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameGeometry {
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
}

impl FrameGeometry {
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for (k, s) in self.kernels.iter().zip(&self.strides) {
            rf += (k - 1) * jump;
            jump *= s;
        }
        rf
    }

    pub fn effective_stride(&self) -> usize {
        self.strides.iter().product()
    }

    /// Output frames for `samples` input samples, applying
    /// `floor((L - k) / s) + 1` layer by layer. `None` when the input is
    /// shorter than some layer's kernel.
    pub fn frames(&self, samples: usize) -> Option<usize> {
        let mut len = samples;
        for (k, s) in self.kernels.iter().zip(&self.strides) {
            if len < *k {
                return None;
            }
            len = (len - k) / s + 1;
        }
        Some(len)
    }
}

/// A zero-padded batch with per-utterance frame bookkeeping. Mask index sets
/// are filled in later and shared by both views.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBatch {
    pub ids: Vec<String>,
    pub sample_rate_hz: u32,
    /// Row-major `batch × width`.
    pub waveforms: Vec<f32>,
    pub width: usize,
    pub lengths: Vec<usize>,
    /// Valid latent frames per utterance.
    pub frame_counts: Vec<usize>,
    /// Latent frames per utterance after padding (NF).
    pub num_frames: usize,
    /// `padding_frame_mask[u][f]` is true for frames beyond utterance `u`'s
    /// valid frames.
    pub padding_frame_mask: Vec<Vec<bool>>,
    /// Sorted masked frame positions per utterance.
    pub mask_indices: Vec<Vec<usize>>,
}

impl MaskedBatch {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn waveform(&self, u: usize) -> &[f32] {
        &self.waveforms[u * self.width..(u + 1) * self.width]
    }

    pub fn total_masked(&self) -> usize {
        self.mask_indices.iter().map(Vec::len).sum()
    }
}

/// Pads `samples` with zeros to the longest length and records lengths and
/// frame counts. Masks are left empty.
pub fn batch_and_pad(samples: &[AudioSample], geometry: &FrameGeometry) -> Result<MaskedBatch> {
    let first = samples.first().ok_or(Error::EmptyBatch)?;
    let rate = first.sample_rate_hz;
    if let Some(s) = samples.iter().find(|s| s.sample_rate_hz != rate) {
        return Err(Error::SampleRateMismatch {
            expected: rate,
            found: s.sample_rate_hz,
        });
    }
    let width = samples.iter().map(AudioSample::len).max().unwrap_or(0);
    let rf = geometry.receptive_field();
    let mut frame_counts = Vec::with_capacity(samples.len());
    for s in samples {
        frame_counts.push(geometry.frames(s.len()).ok_or(Error::TooShort {
            samples: s.len(),
            receptive_field: rf,
        })?);
    }
    let num_frames = geometry.frames(width).expect("width >= every length");
    let mut waveforms = vec![0.0f32; samples.len() * width];
    for (row, s) in waveforms.chunks_mut(width).zip(samples) {
        row[..s.len()].copy_from_slice(&s.samples);
    }
    Ok(MaskedBatch {
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        sample_rate_hz: rate,
        waveforms,
        width,
        lengths: samples.iter().map(AudioSample::len).collect(),
        padding_frame_mask: frame_counts
            .iter()
            .map(|&n| (0..num_frames).map(|f| f >= n).collect())
            .collect(),
        frame_counts,
        num_frames,
        mask_indices: vec![Vec::new(); samples.len()],
    })
}
