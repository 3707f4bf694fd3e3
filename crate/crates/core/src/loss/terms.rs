use rand::Rng;

use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::clustering::{cluster_utterance, UtteranceClusters};
use crate::error::{Error, Result};
use crate::exec;
use crate::loss::{sample_negatives, LossConfig};
use crate::model::EncoderOutputs;
use crate::rng;

/// Distractor indices per utterance and masked step, one set per loss term.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeDraws {
    /// For `L_c`: distractors from `Q_t`.
    pub l_c: Vec<Vec<Vec<usize>>>,
    /// For `L_cross`: distractors from `Q_t′`.
    pub cross: Vec<Vec<Vec<usize>>>,
    /// For `L_cross′`: distractors from `Q_t`.
    pub cross_prime: Vec<Vec<Vec<usize>>>,
}

/// Draws distractors for every masked step of every utterance. Each term
/// gets its own draw unless `share_negative_draws` is set.
pub fn draw_negatives(masked_steps: &[usize], config: &LossConfig, rng: &mut impl Rng) -> Result<NegativeDraws> {
    let one = |rng: &mut _| -> Result<Vec<Vec<Vec<usize>>>> {
        masked_steps
            .iter()
            .map(|&m| (0..m).map(|i| sample_negatives(m, i, config.n_negatives, rng)).collect())
            .collect()
    };
    let l_c = one(rng)?;
    if config.share_negative_draws {
        return Ok(NegativeDraws {
            cross: l_c.clone(),
            cross_prime: l_c.clone(),
            l_c,
        });
    }
    let cross = one(rng)?;
    let cross_prime = one(rng)?;
    Ok(NegativeDraws { l_c, cross, cross_prime })
}

fn rows_f64<T: Real>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).iter().map(|v| v.as_f64()).collect()).collect()
}

/// Per-utterance clustering of the current targets, or `None` entries when
/// clustering is disabled or bypassed. Utterances run in parallel, each with
/// its own stream derived from `(seed, step, utterance)`.
pub fn cluster_batch<T: Real>(
    g: &Graph<T>,
    outputs: &EncoderOutputs,
    config: &LossConfig,
    seed: u64,
    step: u64,
) -> Result<Vec<Option<UtteranceClusters>>> {
    let Some(cc) = config.clustering.as_ref().filter(|c| !c.bypassed()) else {
        return Ok(vec![None; outputs.utterances.len()]);
    };
    let inputs: Vec<_> = outputs
        .utterances
        .iter()
        .map(|u| (rows_f64(g.value(u.q_t)), rows_f64(g.value(u.q_t_prime)), g.value(u.c).rows()))
        .collect();
    exec::map(&inputs, |i, (q, qp, nf)| {
        let mut r = rng::stream(seed ^ cc.seed, &[rng::purpose::CLUSTER, step, i as u64]);
        cluster_utterance(cc, q, qp, *nf, &mut r)
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Term {
    pub loss: Var,
    pub correct: usize,
    pub steps: usize,
    pub scaled: usize,
}

/// Mean over masked steps of the (cluster-scaled) InfoNCE between `anchors`
/// and `targets` (both `[M, D]`); distractors index rows of `targets`.
/// `clusters` gives the cluster id of every target row.
pub(crate) fn contrastive_term<T: Real>(
    g: &mut Graph<T>,
    anchors: Var,
    targets: Var,
    negatives: &[Vec<usize>],
    clusters: Option<&[usize]>,
    config: &LossConfig,
) -> Result<Term> {
    let m = g.value(anchors).rows();
    if g.value(targets).rows() != m || negatives.len() != m {
        return Err(Error::ViewMismatch(format!(
            "{m} anchors, {} targets, {} negative sets",
            g.value(targets).rows(),
            negatives.len()
        )));
    }
    let k = config.n_negatives + 1;
    let mut target_rows = Vec::with_capacity(m * k);
    let mut anchor_rows = Vec::with_capacity(m * k);
    let mut mult = Vec::with_capacity(m * k);
    let mut valid = Vec::with_capacity(m * k);
    let mut scaled = 0;
    let pos_mult = T::lit(1.0 / config.kappa);
    for (i, negs) in negatives.iter().enumerate() {
        if negs.len() != config.n_negatives {
            return Err(Error::InvalidConfig(format!("step {i} has {} negatives", negs.len())));
        }
        target_rows.push(i);
        anchor_rows.push(i);
        mult.push(pos_mult);
        valid.push(true);
        for &j in negs {
            let flagged = match clusters {
                Some(ids) => ids[j] == ids[i],
                None => false,
            };
            scaled += flagged as usize;
            let (mu, keep) = config.scale_factor.multiplier(flagged, config.kappa);
            target_rows.push(j);
            anchor_rows.push(i);
            mult.push(T::lit(mu));
            valid.push(keep);
        }
    }
    let cand = g.gather(targets, target_rows)?;
    let anc = g.gather(anchors, anchor_rows)?;
    let sims = g.cosine(anc, cand)?;
    if g.value(sims).data().iter().any(|v| v.is_nan()) {
        return Err(Error::NanSimilarity);
    }
    let sims = g.reshape(sims, vec![m, k])?;
    let mult = g.constant(Tensor::new(vec![m, k], mult)?);
    let logits = g.mul(sims, mult)?;
    let correct = g
        .value(logits)
        .data()
        .chunks(k)
        .zip(valid.chunks(k))
        .filter(|(row, ok)| row.iter().zip(ok.iter()).skip(1).all(|(l, v)| !*v || *l <= row[0]))
        .count();
    let per_step = g.info_nce(logits, valid)?;
    let loss = g.mean(per_step)?;
    Ok(Term {
        loss,
        correct,
        steps: m,
        scaled,
    })
}

/// Batch-averaged code distributions per group over both views, then
/// `(GV − Σ_g perplexity_g) / GV`. Returns the loss and the summed
/// perplexity node.
pub(crate) fn diversity_term<T: Real>(g: &mut Graph<T>, outputs: &EncoderOutputs) -> Result<(Var, Var)> {
    let groups = outputs.utterances[0].quantized.code_probs.len();
    let total: usize = 2 * outputs.masked_steps();
    let mut perplexity: Option<Var> = None;
    let mut v = 0;
    for grp in 0..groups {
        let mut mean: Option<Var> = None;
        for u in &outputs.utterances {
            for probs in [u.quantized.code_probs[grp], u.quantized_prime.code_probs[grp]] {
                v = g.value(probs).cols();
                let rows = g.value(probs).rows();
                let part = g.mean_rows(probs)?;
                let part = g.scale(part, T::lit(rows as f64 / total as f64))?;
                mean = Some(match mean {
                    Some(acc) => g.add(acc, part)?,
                    None => part,
                });
            }
        }
        let plogp = g.xlogx(mean.expect("non-empty batch"))?;
        let neg_entropy = g.sum(plogp)?;
        let entropy = g.scale(neg_entropy, -T::one())?;
        let perp = g.exp(entropy)?;
        perplexity = Some(match perplexity {
            Some(acc) => g.add(acc, perp)?,
            None => perp,
        });
    }
    let perplexity = perplexity.expect("at least one group");
    let gv = (groups * v) as f64;
    let one = g.constant(Tensor::scalar(T::one()));
    let frac = g.scale(perplexity, T::lit(1.0 / gv))?;
    Ok((g.sub(one, frac)?, perplexity))
}
