//! Augmented views of a waveform.
//!
//! Recipe I zeroes one random contiguous quarter of the clip. Recipe II chains
//! additive noise, reverberation and background noise, each applied with its
//! own probability. Every recipe preserves length.

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio_io::{AudioSample, MAX_AMPLITUDE};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Recipe {
    #[serde(rename = "identity")]
    Identity,
    /// Crop-and-zero.
    I,
    /// Additive noise → reverberation → background noise.
    II,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub recipe: Recipe,
    pub crop_fraction: f64,
    pub p_additive: f64,
    pub snr_additive_db: (f64, f64),
    pub p_rir: f64,
    pub p_background: f64,
    pub snr_background_db: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            recipe: Recipe::II,
            crop_fraction: 0.25,
            p_additive: 0.6,
            snr_additive_db: (3.0, 15.0),
            p_rir: 0.7,
            p_background: 0.8,
            snr_background_db: (0.0, 15.0),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            recipe: Recipe::Identity,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, p) in [
            ("p_additive", self.p_additive),
            ("p_rir", self.p_rir),
            ("p_background", self.p_background),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        for (name, (lo, hi)) in [
            ("snr_additive_db", self.snr_additive_db),
            ("snr_background_db", self.snr_background_db),
        ] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return bad(format!("{name} range [{lo}, {hi}] is empty"));
            }
        }
        if !(0.0..1.0).contains(&self.crop_fraction) {
            return Err(Error::InvalidFraction(self.crop_fraction));
        }
        Ok(())
    }
}

/// Record of the random decisions taken by one [`Augmenter::apply_traced`]
/// call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentTrace {
    pub events: Vec<AugmentEvent>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AugmentEvent {
    Crop {
        start: usize,
        len: usize,
    },
    /// Additive (`background == false`) or background noise stage.
    Noise {
        background: bool,
        applied: bool,
        snr_db: f64,
        noise_index: usize,
        /// SNR re-measured from the two addends actually summed.
        measured_snr_db: f64,
    },
    Reverb {
        applied: bool,
        rir_index: usize,
    },
    Renormalized {
        gain: f64,
    },
}

/// An [`AugmentConfig`] bound to its noise and impulse-response banks.
#[derive(Clone, Debug)]
pub struct Augmenter {
    pub config: AugmentConfig,
    pub noise_bank: Vec<AudioSample>,
    pub rir_bank: Vec<Vec<f32>>,
}

impl Augmenter {
    pub fn new(config: AugmentConfig, noise_bank: Vec<AudioSample>, rir_bank: Vec<Vec<f32>>) -> Result<Self> {
        config.validate()?;
        if config.recipe == Recipe::II {
            if noise_bank.is_empty() && (config.p_additive > 0.0 || config.p_background > 0.0) {
                return Err(Error::InvalidConfig("noise bank is empty".into()));
            }
            if rir_bank.is_empty() && config.p_rir > 0.0 {
                return Err(Error::InvalidConfig("impulse response bank is empty".into()));
            }
        }
        if rir_bank.iter().any(Vec::is_empty) {
            return Err(Error::EmptyImpulseResponse);
        }
        Ok(Self {
            config,
            noise_bank,
            rir_bank,
        })
    }

    /// Recipe II with synthetic noise and impulse-response banks.
    pub fn with_synthetic_banks(config: AugmentConfig, sample_rate_hz: u32) -> Result<Self> {
        let seed = config.seed;
        Self::new(
            config,
            synthetic_noise_bank(seed, 8, sample_rate_hz as usize * 2, sample_rate_hz),
            synthetic_rir_bank(seed, 8, sample_rate_hz),
        )
    }

    pub fn apply(&self, x: &AudioSample, rng: &mut impl Rng) -> Result<AudioSample> {
        self.apply_traced(x, rng).map(|(y, _)| y)
    }

    pub fn apply_traced(&self, x: &AudioSample, rng: &mut impl Rng) -> Result<(AudioSample, AugmentTrace)> {
        let mut trace = AugmentTrace::default();
        let c = &self.config;
        let samples = match c.recipe {
            Recipe::Identity => return Ok((x.clone(), trace)),
            Recipe::I => {
                let (out, start, len) = crop_zeros(&x.samples, c.crop_fraction, rng)?;
                trace.events.push(AugmentEvent::Crop { start, len });
                out
            }
            Recipe::II => {
                let mut y = x.samples.clone();
                y = self.noise_stage(y, false, c.p_additive, c.snr_additive_db, rng, &mut trace)?;
                let applied = rng.gen::<f64>() < c.p_rir;
                let mut rir_index = 0;
                if applied {
                    rir_index = rng.gen_range(0..self.rir_bank.len());
                    y = convolve_rir(&y, &self.rir_bank[rir_index])?;
                }
                trace.events.push(AugmentEvent::Reverb { applied, rir_index });
                y = self.noise_stage(y, true, c.p_background, c.snr_background_db, rng, &mut trace)?;
                y
            }
        };
        let (samples, gain) = limit_peak(samples);
        if let Some(gain) = gain {
            trace.events.push(AugmentEvent::Renormalized { gain });
        }
        Ok((x.derived(samples), trace))
    }

    fn noise_stage(
        &self,
        signal: Vec<f32>,
        background: bool,
        p: f64,
        (lo, hi): (f64, f64),
        rng: &mut impl Rng,
        trace: &mut AugmentTrace,
    ) -> Result<Vec<f32>> {
        let applied = rng.gen::<f64>() < p;
        if !applied {
            trace.events.push(AugmentEvent::Noise {
                background,
                applied,
                snr_db: f64::NAN,
                noise_index: 0,
                measured_snr_db: f64::NAN,
            });
            return Ok(signal);
        }
        let snr_db = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let noise_index = rng.gen_range(0..self.noise_bank.len());
        let noise = fit_length(&self.noise_bank[noise_index].samples, signal.len(), rng);
        let gain = mixing_gain(&signal, &noise, snr_db)?;
        let scaled = scale(&noise, gain);
        let measured_snr_db = snr_db_of(&signal, &scaled);
        trace.events.push(AugmentEvent::Noise {
            background,
            applied,
            snr_db,
            noise_index,
            measured_snr_db,
        });
        Ok(signal.iter().zip(&scaled).map(|(s, n)| s + n).collect())
    }
}

/// Zeroes one contiguous region of `round(fraction·len)` samples whose start
/// is uniform over the valid positions.
pub fn crop_replace_zeros(x: &AudioSample, fraction: f64, rng: &mut impl Rng) -> Result<AudioSample> {
    let (out, _, _) = crop_zeros(&x.samples, fraction, rng)?;
    Ok(x.derived(out))
}

fn crop_zeros(x: &[f32], fraction: f64, rng: &mut impl Rng) -> Result<(Vec<f32>, usize, usize)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidFraction(fraction));
    }
    let len = (fraction * x.len() as f64).round() as usize;
    let start = rng.gen_range(0..=x.len() - len);
    let mut out = x.to_vec();
    out[start..start + len].iter_mut().for_each(|v| *v = 0.0);
    Ok((out, start, len))
}

pub fn rms(x: &[f32]) -> f64 {
    (x.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// `g = (rms_signal / rms_noise) · 10^(−snr_db / 20)`.
pub fn mixing_gain(signal: &[f32], noise: &[f32], snr_db: f64) -> Result<f64> {
    let (rs, rn) = (rms(signal), rms(noise));
    if rs == 0.0 {
        return Err(Error::Silent("signal"));
    }
    if rn == 0.0 {
        return Err(Error::Silent("noise"));
    }
    Ok(rs / rn * 10f64.powf(-snr_db / 20.0))
}

/// `signal + g·noise` with `g` from [`mixing_gain`]. Both inputs must have
/// the same length (see [`fit_length`]).
pub fn mix_at_snr(signal: &[f32], noise: &[f32], snr_db: f64) -> Result<Vec<f32>> {
    if signal.len() != noise.len() {
        return Err(Error::LengthMismatch(format!(
            "signal has {} samples, noise {}",
            signal.len(),
            noise.len()
        )));
    }
    let g = mixing_gain(signal, noise, snr_db)?;
    Ok(signal.iter().zip(scale(noise, g)).map(|(s, n)| s + n).collect())
}

fn scale(x: &[f32], g: f64) -> Vec<f32> {
    x.iter().map(|v| (*v as f64 * g) as f32).collect()
}

/// `10·log10(P_signal / P_noise)`.
pub fn snr_db_of(signal: &[f32], noise: &[f32]) -> f64 {
    20.0 * (rms(signal) / rms(noise)).log10()
}

/// Tiles `noise` when it is shorter than `len`; otherwise takes a random
/// window of `len` samples.
pub fn fit_length(noise: &[f32], len: usize, rng: &mut impl Rng) -> Vec<f32> {
    if noise.len() >= len {
        let start = rng.gen_range(0..=noise.len() - len);
        noise[start..start + len].to_vec()
    } else {
        noise.iter().copied().cycle().take(len).collect()
    }
}

/// Linear convolution truncated to the signal length, then rescaled so its
/// peak matches the input peak.
pub fn convolve_rir(signal: &[f32], rir: &[f32]) -> Result<Vec<f32>> {
    if rir.is_empty() {
        return Err(Error::EmptyImpulseResponse);
    }
    let n = signal.len();
    let full = n + rir.len() - 1;
    let size = full.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let load = |x: &[f32]| {
        let mut buf = vec![Complex::new(0.0, 0.0); size];
        buf.iter_mut().zip(x).for_each(|(b, v)| b.re = *v as f64);
        buf
    };
    let mut a = load(signal);
    let mut b = load(rir);
    fwd.process(&mut a);
    fwd.process(&mut b);
    a.iter_mut().zip(&b).for_each(|(x, y)| *x *= y);
    inv.process(&mut a);
    let norm = size as f64;
    let y: Vec<f64> = a[..n].iter().map(|c| c.re / norm).collect();
    let peak_in = signal.iter().fold(0.0f64, |m, v| m.max((*v as f64).abs()));
    let peak_out = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let g = if peak_out > 0.0 { peak_in / peak_out } else { 1.0 };
    Ok(y.into_iter().map(|v| (v * g) as f32).collect())
}

/// Rescales so that every value lies in `[-1, 1)` when some value falls
/// outside; returns the applied gain.
fn limit_peak(x: Vec<f32>) -> (Vec<f32>, Option<f64>) {
    if x.iter().all(|v| (-1.0..1.0).contains(v)) {
        return (x, None);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max((*v as f64).abs()));
    let g = MAX_AMPLITUDE as f64 / peak;
    (
        x.into_iter()
            .map(|v| ((v as f64 * g) as f32).clamp(-MAX_AMPLITUDE, MAX_AMPLITUDE))
            .collect(),
        Some(g),
    )
}

/// Coloured noise clips (white, pink-ish, brown-ish) at moderate level.
pub fn synthetic_noise_bank(seed: u64, count: usize, len: usize, sample_rate_hz: u32) -> Vec<AudioSample> {
    (0..count)
        .map(|i| {
            let mut r = rng::stream(seed, &[rng::purpose::BANKS, 0, i as u64]);
            let pole = [0.0, 0.9, 0.99][i % 3];
            let mut state = 0.0f64;
            let mut raw: Vec<f64> = (0..len)
                .map(|_| {
                    state = pole * state + r.gen_range(-1.0..1.0);
                    state
                })
                .collect();
            let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
            raw.iter_mut().for_each(|v| *v *= 0.5 / peak);
            AudioSample::new(
                format!("noise-{i}"),
                raw.into_iter().map(|v| v as f32).collect(),
                sample_rate_hz,
            )
            .expect("bounded noise")
        })
        .collect()
}

/// Exponentially decaying noise tails behind a unit direct path.
pub fn synthetic_rir_bank(seed: u64, count: usize, sample_rate_hz: u32) -> Vec<Vec<f32>> {
    (0..count)
        .map(|i| {
            let mut r = rng::stream(seed, &[rng::purpose::BANKS, 1, i as u64]);
            let rt60 = r.gen_range(0.1..0.5);
            let len = (rt60 * sample_rate_hz as f64) as usize;
            let decay = (-6.9 / (rt60 * sample_rate_hz as f64)).exp();
            let mut h = vec![0.0f32; len.max(1)];
            h[0] = 1.0;
            let mut amp = 0.3;
            for v in h.iter_mut().skip(1) {
                amp *= decay;
                *v = (amp * r.gen_range(-1.0..1.0)) as f32;
            }
            h
        })
        .collect()
}
