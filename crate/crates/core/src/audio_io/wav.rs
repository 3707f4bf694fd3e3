use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::exec;

/// Where a waveform came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Original,
    Augmented,
}

/// Mono waveform with values in `[-1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioSample {
    pub id: String,
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
    pub provenance: Provenance,
}

pub const SAMPLE_RATE_HZ: u32 = 16_000;

/// Largest value representable as PCM16 (`32767 / 32768`).
pub const MAX_AMPLITUDE: f32 = 32767.0 / 32768.0;

impl AudioSample {
    pub fn new(id: impl Into<String>, samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        let id = id.into();
        if samples.is_empty() {
            return Err(Error::EmptyAudio(id));
        }
        if let Some((index, &value)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= -1.0 && **v < 1.0))
        {
            return Err(Error::SampleOutOfRange { id, index, value });
        }
        Ok(Self {
            id,
            samples,
            sample_rate_hz,
            provenance: Provenance::Original,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same id and rate, new content, marked as augmented.
    pub(crate) fn derived(&self, samples: Vec<f32>) -> Self {
        Self {
            id: self.id.clone(),
            samples,
            sample_rate_hz: self.sample_rate_hz,
            provenance: Provenance::Augmented,
        }
    }
}

/// Reads a 16-bit PCM mono RIFF/WAVE file. Integer samples are divided by
/// 32768. The id is the file stem.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioSample> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::NotMono {
            channels: spec.channels,
        });
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::NotPcm16 {
            detail: format!("{:?} with {} bits", spec.sample_format, spec.bits_per_sample),
        });
    }
    let expected = reader.len() as usize;
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if samples.len() != expected {
        return Err(Error::MalformedWav(format!(
            "header announces {expected} samples, found {}",
            samples.len()
        )));
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    AudioSample::new(id, samples, spec.sample_rate)
}

/// Quantizes to PCM16 (`round(x·32768)`, clamped) and writes a mono file.
pub fn write_wav(path: impl AsRef<Path>, sample: &AudioSample) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &v in &sample.samples {
        w.write_sample(to_pcm16(v))?;
    }
    w.finalize()?;
    Ok(())
}

pub fn to_pcm16(v: f32) -> i16 {
    (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// `*.wav` files in `dir`, sorted by name.
pub fn wav_paths(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads every WAV file in `dir` (in parallel), sorted by file name.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<AudioSample>> {
    let paths = wav_paths(dir)?;
    exec::map(&paths, |_, p| load_wav(p)).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn write_raw(path: &Path, channels: u16, bits: u16, data: &[i16]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: 16_000,
            bits_per_sample: bits,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &v in data {
            if bits == 16 {
                w.write_sample(v).unwrap();
            } else {
                w.write_sample(v as i32).unwrap();
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn pcm16_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_raw(&p, 1, 16, &[16384, -32768, 0, 32767]);
        let s = load_wav(&p).unwrap();
        assert_eq!(s.samples[0], 0.5);
        assert_eq!(s.samples[1], -1.0);
        assert_eq!(s.samples[3], MAX_AMPLITUDE);
        assert_eq!(s.sample_rate_hz, 16_000);
        assert_eq!(s.id, "a");
    }

    #[test]
    fn round_trip_preserves_integers() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let ints: Vec<i16> = (0..4000).map(|_| rng.gen()).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clip.wav");
        write_raw(&p, 1, 16, &ints);
        let s = load_wav(&p).unwrap();
        let p2 = dir.path().join("clip2.wav");
        write_wav(&p2, &s).unwrap();
        let back: Vec<i16> = hound::WavReader::open(&p2)
            .unwrap()
            .samples::<i16>()
            .map(|v| v.unwrap())
            .collect();
        assert_eq!(back, ints);
    }

    #[test]
    fn rejects_stereo_and_non_pcm16() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        write_raw(&p, 2, 16, &[1, 2, 3, 4]);
        assert!(matches!(load_wav(&p), Err(Error::NotMono { channels: 2 })));
        let p = dir.path().join("b24.wav");
        write_raw(&p, 1, 24, &[1, 2, 3, 4]);
        assert!(matches!(load_wav(&p), Err(Error::NotPcm16 { .. })));
    }

    #[test]
    fn rejects_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        write_raw(&p, 1, 16, &[7; 1000]);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 501]).unwrap();
        let err = load_wav(&p).unwrap_err();
        assert!(matches!(err, Error::MalformedWav(_)), "{err:?}");
        std::fs::write(&p, &bytes[..20]).unwrap();
        assert!(load_wav(&p).is_err());
    }

    #[test]
    fn sample_validation() {
        assert!(matches!(AudioSample::new("x", vec![], 16_000), Err(Error::EmptyAudio(_))));
        assert!(matches!(
            AudioSample::new("x", vec![0.0, 1.0], 16_000),
            Err(Error::SampleOutOfRange { index: 1, .. })
        ));
        assert!(AudioSample::new("x", vec![-1.0, 0.99], 16_000).is_ok());
    }
}
