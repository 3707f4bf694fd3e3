//! Built-in labeled corpus: four generator classes of one-second clips.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio_io::{to_pcm16, write_wav, AudioSample, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::rng;

pub const CLASS_NAMES: [&str; 4] = ["tone", "chirp", "noise_band", "am_tone"];
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub id: String,
    pub label: usize,
    pub class: String,
}

fn partials(r: &mut impl Rng, n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|_| (r.gen_range(0.2..1.0), r.gen_range(0.0..TAU))).collect()
}

/// Slow sinusoidal drift in octaves: returns the frequency multiplier at `t`.
fn contour(r: &mut impl Rng, octaves: (f64, f64)) -> impl Fn(f64) -> f64 {
    let rate = r.gen_range(1.0..4.0);
    let phase = r.gen_range(0.0..TAU);
    let depth = r.gen_range(octaves.0..octaves.1);
    move |t| (depth * (TAU * rate * t + phase).sin()).exp2()
}

/// Phase of a partial whose instantaneous frequency is `freq(t)`.
fn integrate(len: usize, sr: f64, phase0: f64, freq: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut phase = phase0;
    (0..len)
        .map(|i| {
            let p = phase;
            phase = (phase + TAU * freq(i as f64 / sr) / sr) % TAU;
            p
        })
        .collect()
}

/// One clip of `class`: gliding harmonic tone, repeated up-down chirp,
/// drifting band of sinusoids, or gliding amplitude-modulated tone, under
/// a syllable-rate envelope, plus a little white noise.
pub fn synth_clip(class: usize, len: usize, rate: u32, r: &mut impl Rng) -> Vec<f32> {
    let sr = rate as f64;
    let t = |i: usize| i as f64 / sr;
    let mut x: Vec<f64> = match class % 4 {
        0 => {
            let f0 = r.gen_range(150.0..400.0);
            let m = contour(r, (0.3, 0.6));
            let h = partials(r, 4);
            let mut x = vec![0.0; len];
            for (k, (a, ph)) in h.iter().enumerate() {
                let n = (k + 1) as f64;
                for (v, p) in x.iter_mut().zip(integrate(len, sr, *ph, |t| n * f0 * m(t))) {
                    *v += a / n * p.sin();
                }
            }
            x
        }
        1 => {
            let lo: f64 = r.gen_range(200.0..800.0);
            let hi = lo * r.gen_range(2.0..4.0);
            let period = r.gen_range(0.2..0.5);
            let offset = r.gen_range(0.0..period);
            let tri = move |t: f64| {
                let u = ((t + offset) / period).fract();
                1.0 - (2.0 * u - 1.0).abs()
            };
            let ph = r.gen_range(0.0..TAU);
            integrate(len, sr, ph, |t| lo * (hi / lo).powf(tri(t))).into_iter().map(f64::sin).collect()
        }
        2 => {
            let centre = r.gen_range(600.0..2500.0);
            let width = r.gen_range(100.0..400.0);
            let m = contour(r, (0.4, 0.8));
            let comps: Vec<(f64, f64)> = (0..40).map(|_| (r.gen_range(-width..width), r.gen_range(0.0..TAU))).collect();
            let mut x = vec![0.0; len];
            for (off, ph) in comps {
                for (v, p) in x.iter_mut().zip(integrate(len, sr, ph, |t| centre * m(t) + off)) {
                    *v += p.sin();
                }
            }
            x
        }
        _ => {
            let fc = r.gen_range(300.0..1200.0);
            let m = contour(r, (0.3, 0.6));
            let fm = r.gen_range(3.0..12.0);
            let depth = r.gen_range(0.6..1.0);
            let ph = r.gen_range(0.0..TAU);
            integrate(len, sr, ph, |t| fc * m(t))
                .into_iter()
                .enumerate()
                .map(|(i, p)| (1.0 + depth * (TAU * fm * t(i)).sin()) * p.sin())
                .collect()
        }
    };
    let syllable = r.gen_range(2.0..5.0);
    let sph = r.gen_range(0.0..TAU);
    x.iter_mut()
        .enumerate()
        .for_each(|(i, v)| *v *= 0.55 + 0.45 * (TAU * syllable * t(i) + sph).sin());
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let level = r.gen_range(0.2..0.6) / peak;
    x.iter_mut().for_each(|v| *v = *v * level + r.gen_range(-0.01..0.01));
    // quantized like a stored PCM16 clip, so memory and disk agree exactly
    x.into_iter().map(|v| to_pcm16(v as f32) as f32 / 32768.0).collect()
}

/// `n` one-second clips; clip `i` has class `i % 4`.
pub fn synthetic_corpus(n: usize, seed: u64) -> (Vec<AudioSample>, Vec<LabelRow>) {
    let rate = SAMPLE_RATE_HZ;
    let mut clips = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 4;
        let mut r = rng::stream(seed, &[rng::purpose::SYNTH, i as u64]);
        let id = format!("clip-{i:04}");
        let samples = synth_clip(class, rate as usize, rate, &mut r);
        clips.push(AudioSample::new(id.clone(), samples, rate).expect("bounded synthetic clip"));
        labels.push(LabelRow {
            id,
            label: class,
            class: CLASS_NAMES[class].into(),
        });
    }
    (clips, labels)
}

/// Writes the corpus as WAV files plus `labels.csv`.
pub fn write_synthetic(out: impl AsRef<Path>, n: usize, seed: u64) -> Result<Vec<LabelRow>> {
    let out = out.as_ref();
    std::fs::create_dir_all(out)?;
    let (clips, labels) = synthetic_corpus(n, seed);
    for c in &clips {
        write_wav(out.join(format!("{}.wav", c.id)), c)?;
    }
    let mut w = csv::Writer::from_path(out.join(LABELS_FILE))?;
    for l in &labels {
        w.serialize(l)?;
    }
    w.flush()?;
    Ok(labels)
}

pub fn read_labels(dir: impl AsRef<Path>) -> Result<Vec<LabelRow>> {
    let path = dir.as_ref().join(LABELS_FILE);
    if !path.exists() {
        return Err(Error::EmptyCorpus(format!("{} not found", path.display())));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}
