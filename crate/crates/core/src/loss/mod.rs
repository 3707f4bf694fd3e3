//! Training objectives: InfoNCE with optional cluster scaling of negatives,
//! the two cross-view terms, their weighted combination and the codebook
//! diversity penalty.

mod scalar;
mod terms;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Real, Var};
use crate::clustering::{ClusterConfig, UtteranceClusters};
use crate::error::{Error, Result};
use crate::model::EncoderOutputs;

pub use scalar::{contrastive_loss, diversity_loss, sample_negatives, standard_contrastive_loss};
pub use terms::{cluster_batch, draw_negatives, NegativeDraws};

/// Multiplier for the similarities of negatives that share the positive's
/// cluster. `None` stands for −∞: such negatives are dropped. Serialized as
/// a number or `null`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScaleFactor(pub Option<f64>);

impl ScaleFactor {
    pub const ONE: Self = Self(Some(1.0));
    pub const NEG_INFINITY: Self = Self(None);

    /// Logit multiplier and inclusion for one negative.
    pub(crate) fn multiplier(self, flagged: bool, kappa: f64) -> (f64, bool) {
        match (flagged, self.0) {
            (false, _) => (1.0 / kappa, true),
            (true, Some(sf)) => (sf / kappa, true),
            (true, None) => (1.0 / kappa, false),
        }
    }

    pub fn label(self) -> String {
        match self.0 {
            Some(v) => format!("{v}"),
            None => "-∞".into(),
        }
    }
}

impl Default for ScaleFactor {
    fn default() -> Self {
        Self::ONE
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// κ
    pub kappa: f64,
    pub n_negatives: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// SF
    pub scale_factor: ScaleFactor,
    pub diversity_weight: f64,
    /// `None` disables clustering.
    pub clustering: Option<ClusterConfig>,
    /// Reuse the `L_c` distractor draw for both cross terms.
    pub share_negative_draws: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kappa: 0.1,
            n_negatives: 100,
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            scale_factor: ScaleFactor::ONE,
            diversity_weight: 0.1,
            clustering: None,
            share_negative_draws: false,
        }
    }
}

impl LossConfig {
    /// α=1, β=γ=0, no clustering.
    pub fn baseline() -> Self {
        Self::default()
    }

    /// α=1, β=γ=0.5 with clustering at the given CF and SF.
    pub fn ccc(cluster_factor: usize, scale_factor: ScaleFactor, pooled: bool) -> Self {
        Self {
            beta: 0.5,
            gamma: 0.5,
            scale_factor,
            clustering: Some(ClusterConfig {
                cluster_factor,
                pooled,
                ..ClusterConfig::default()
            }),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) || self.n_negatives == 0 {
            return Err(Error::InvalidConfig("kappa must be positive and n_negatives >= 1".into()));
        }
        if [self.alpha, self.beta, self.gamma, self.diversity_weight].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        if self.scale_factor.0.is_some_and(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("scale_factor must be finite or null".into()));
        }
        if let Some(c) = &self.clustering {
            c.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_cross: f64,
    pub l_cross_prime: f64,
    pub l_diversity: f64,
    pub l_total: f64,
    /// Fraction of masked steps (in `L_c`) whose positive has the highest
    /// scaled similarity; ties count as correct.
    pub contrastive_accuracy: f64,
    /// Negatives whose similarity was scaled or dropped, over all terms.
    pub scaled_negative_count: usize,
    /// Σ_g exp(H(p̄_g)).
    pub codebook_perplexity: f64,
}

pub struct LossGraph {
    pub total: Var,
    pub l_c: Var,
    pub l_cross: Var,
    pub l_cross_prime: Var,
    pub l_diversity: Var,
    pub breakdown: LossBreakdown,
}

fn batch_mean<T: Real>(g: &mut Graph<T>, parts: &[Var]) -> Result<Var> {
    let mut acc = parts[0];
    for p in &parts[1..] {
        acc = g.add(acc, *p)?;
    }
    g.scale(acc, T::lit(1.0 / parts.len() as f64))
}

/// Builds `α·L_c + β·L_cross + γ·L_cross′ + w·L_d`. Each InfoNCE term is
/// averaged over masked steps, then over utterances. `clusters[u]`, when
/// present, supplies per-view cluster ids: `L_c` and `L_cross′` flag by the
/// original view's ids, `L_cross` by the augmented view's.
pub fn combined_loss<T: Real>(
    g: &mut Graph<T>,
    outputs: &EncoderOutputs,
    config: &LossConfig,
    clusters: &[Option<UtteranceClusters>],
    negatives: &NegativeDraws,
) -> Result<LossGraph> {
    config.validate()?;
    let n = outputs.utterances.len();
    if n == 0 || clusters.len() != n || negatives.l_c.len() != n {
        return Err(Error::InvalidConfig(format!(
            "{n} utterances, {} cluster entries, {} negative sets",
            clusters.len(),
            negatives.l_c.len()
        )));
    }
    let (mut lc, mut lx, mut lxp) = (Vec::new(), Vec::new(), Vec::new());
    let (mut correct, mut steps, mut scaled) = (0, 0, 0);
    for (u, out) in outputs.utterances.iter().enumerate() {
        let ids = clusters[u].as_ref();
        let orig = ids.map(|c| c.original.as_slice());
        let aug = ids.map(|c| c.augmented.as_slice());
        let a = terms::contrastive_term(g, out.c_t, out.q_t, &negatives.l_c[u], orig, config)?;
        let b = terms::contrastive_term(g, out.c_t, out.q_t_prime, &negatives.cross[u], aug, config)?;
        let c = terms::contrastive_term(g, out.c_t_prime, out.q_t, &negatives.cross_prime[u], orig, config)?;
        correct += a.correct;
        steps += a.steps;
        scaled += a.scaled + b.scaled + c.scaled;
        lc.push(a.loss);
        lx.push(b.loss);
        lxp.push(c.loss);
    }
    let l_c = batch_mean(g, &lc)?;
    let l_cross = batch_mean(g, &lx)?;
    let l_cross_prime = batch_mean(g, &lxp)?;
    let (l_diversity, perplexity) = terms::diversity_term(g, outputs)?;

    let mut total = g.scale(l_c, T::lit(config.alpha))?;
    for (var, w) in [(l_cross, config.beta), (l_cross_prime, config.gamma), (l_diversity, config.diversity_weight)] {
        let term = g.scale(var, T::lit(w))?;
        total = g.add(total, term)?;
    }
    let item = |g: &Graph<T>, v: Var| g.value(v).item().as_f64();
    let breakdown = LossBreakdown {
        l_c: item(g, l_c),
        l_cross: item(g, l_cross),
        l_cross_prime: item(g, l_cross_prime),
        l_diversity: item(g, l_diversity),
        l_total: item(g, total),
        contrastive_accuracy: correct as f64 / steps as f64,
        scaled_negative_count: scaled,
        codebook_perplexity: item(g, perplexity),
    };
    Ok(LossGraph {
        total,
        l_c,
        l_cross,
        l_cross_prime,
        l_diversity,
        breakdown,
    })
}
