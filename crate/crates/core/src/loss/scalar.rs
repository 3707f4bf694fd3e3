//! Plain `f64` forms of the objectives, used as oracles and diagnostics.

use rand::Rng;

use crate::error::{Error, Result};
use crate::loss::ScaleFactor;

/// `max(valid logits) + ln Σ exp(l − max) − l₀`.
pub(crate) fn info_nce_row(logits: &[f64], valid: &[bool]) -> f64 {
    let m = logits
        .iter()
        .zip(valid)
        .filter(|(_, v)| **v)
        .fold(f64::NEG_INFINITY, |m, (l, _)| m.max(*l));
    let z: f64 = logits.iter().zip(valid).filter(|(_, v)| **v).map(|(l, _)| (l - m).exp()).sum();
    m + z.ln() - logits[0]
}

fn check_sims(sim_pos: f64, sims_neg: &[f64]) -> Result<()> {
    if sim_pos.is_nan() || sims_neg.iter().any(|s| s.is_nan()) {
        return Err(Error::NanSimilarity);
    }
    Ok(())
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidConfig(format!("kappa must be positive, got {kappa}")));
    }
    Ok(())
}

/// InfoNCE over one positive and its distractors:
/// `−log(e^{s⁺/κ} / (e^{s⁺/κ} + Σ e^{s⁻/κ}))`.
pub fn standard_contrastive_loss(sim_pos: f64, sims_neg: &[f64], kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    check_sims(sim_pos, sims_neg)?;
    let inv = 1.0 / kappa;
    let logits: Vec<f64> = std::iter::once(sim_pos).chain(sims_neg.iter().copied()).map(|s| s * inv).collect();
    Ok(info_nce_row(&logits, &vec![true; logits.len()]))
}

/// Cluster-scaled InfoNCE: negatives with `flags[i]` set enter the
/// denominator as `e^{s·SF/κ}`, or not at all when SF is −∞. The positive
/// term is never scaled.
pub fn contrastive_loss(sim_pos: f64, sims_neg: &[f64], flags: &[bool], sf: ScaleFactor, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    check_sims(sim_pos, sims_neg)?;
    if flags.len() != sims_neg.len() {
        return Err(Error::InvalidConfig(format!(
            "{} flags for {} negatives",
            flags.len(),
            sims_neg.len()
        )));
    }
    let (logits, valid) = scaled_logits(sim_pos, sims_neg, flags, sf, kappa);
    Ok(info_nce_row(&logits, &valid))
}

/// Logits and validity for one step; shared by the scalar loss and the
/// accuracy diagnostic.
pub(crate) fn scaled_logits(sim_pos: f64, sims_neg: &[f64], flags: &[bool], sf: ScaleFactor, kappa: f64) -> (Vec<f64>, Vec<bool>) {
    let mut logits = Vec::with_capacity(sims_neg.len() + 1);
    let mut valid = Vec::with_capacity(sims_neg.len() + 1);
    logits.push(sim_pos * (1.0 / kappa));
    valid.push(true);
    for (s, f) in sims_neg.iter().zip(flags) {
        let (mult, keep) = sf.multiplier(*f, kappa);
        logits.push(s * mult);
        valid.push(keep);
    }
    (logits, valid)
}

/// `n` indices drawn uniformly with replacement from `0..masked_steps`
/// without `positive`.
pub fn sample_negatives(masked_steps: usize, positive: usize, n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if masked_steps < 2 {
        return Err(Error::TooFewMaskedSteps(masked_steps));
    }
    if positive >= masked_steps {
        return Err(Error::IndexOutOfRange {
            index: positive,
            len: masked_steps,
        });
    }
    Ok((0..n)
        .map(|_| {
            let j = rng.gen_range(0..masked_steps - 1);
            if j >= positive {
                j + 1
            } else {
                j
            }
        })
        .collect())
}

/// `(GV − Σ_g exp(H(p̄_g))) / GV` where `p̄_g` averages the rows of group
/// `g`. Each element of `groups` is a `rows × V` row-major matrix.
pub fn diversity_loss(groups: &[Vec<f64>], v: usize) -> Result<f64> {
    if v < 2 || groups.is_empty() {
        return Err(Error::InvalidConfig("diversity loss needs G >= 1 and V >= 2".into()));
    }
    let mut perplexity = 0.0;
    for probs in groups {
        if probs.is_empty() || probs.len() % v != 0 {
            return Err(Error::InvalidConfig(format!("{} probabilities is not a multiple of V = {v}", probs.len())));
        }
        let rows = probs.len() / v;
        let mut mean = vec![0.0; v];
        for (r, row) in probs.chunks(v).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-5 || row.iter().any(|p| *p < 0.0) {
                return Err(Error::NotADistribution { row: r, sum });
            }
            mean.iter_mut().zip(row).for_each(|(m, p)| *m += p);
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let entropy: f64 = -mean.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>();
        perplexity += entropy.exp();
    }
    let gv = (groups.len() * v) as f64;
    Ok((gv - perplexity) / gv)
}
