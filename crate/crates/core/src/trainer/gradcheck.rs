//! Finite-difference check of the full objective on a tiny model in `f64`.

use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::audio_io::AudioSample;
use crate::augment::{AugmentConfig, Recipe};
use crate::autodiff::grad_check;
use crate::error::Result;
use crate::loss::{LossConfig, ScaleFactor};
use crate::model::{MaskConfig, Params, ModelConfig, QuantizerConfig, QuantizerMode};
use crate::rng;
use crate::trainer::{build_augmenter, initial_params, loss_graph, make_batches, prepare_views, synth_clip, TrainConfig};

pub const GRADCHECK_EPSILON: f64 = 1e-4;

/// Std of the offset added to every initial parameter before checking.
pub const GRADCHECK_JITTER: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckRow {
    pub name: String,
    pub max_relative_error: f64,
    pub coordinates: usize,
    pub loss: f64,
}

/// Model small enough to difference every parameter.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        encoder_channels: vec![8, 8],
        encoder_strides: vec![5, 2],
        encoder_kernel_widths: vec![10, 4],
        d_latent: 8,
        d_context: 8,
        n_transformer_layers: 1,
        n_heads: 2,
        d_ff: 12,
        pos_conv_kernel: 3,
        quantizer: QuantizerConfig {
            groups: 2,
            entries_per_group: 4,
            d_code: 4,
            ..QuantizerConfig::default()
        },
        mask: MaskConfig {
            p_start: 0.25,
            span_length: 3,
        },
    }
}

/// The four objective configurations derived from `base`: baseline,
/// augmentation only, clustering only, and the pooled combination.
pub fn gradcheck_configs(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let sf = match base.loss.scale_factor {
        ScaleFactor(Some(v)) if v != 1.0 => ScaleFactor(Some(v)),
        ScaleFactor(None) => ScaleFactor::NEG_INFINITY,
        _ => ScaleFactor(Some(0.3)),
    };
    let loss = LossConfig {
        n_negatives: base.loss.n_negatives.min(10),
        ..base.loss.clone()
    };
    let cf = 4;
    let mk = |aug: Recipe, l: LossConfig| TrainConfig {
        model: tiny_model(),
        loss: l,
        augment: AugmentConfig {
            recipe: aug,
            ..base.augment.clone()
        },
        seed: base.seed,
        ..TrainConfig::default()
    };
    let baseline = LossConfig {
        beta: 0.0,
        gamma: 0.0,
        clustering: None,
        scale_factor: ScaleFactor::ONE,
        alpha: 1.0,
        ..loss.clone()
    };
    let aug_only = LossConfig {
        beta: 0.5,
        gamma: 0.5,
        ..baseline.clone()
    };
    let cluster_only = LossConfig {
        scale_factor: sf,
        ..LossConfig::ccc(cf, sf, false)
    };
    let cluster_only = LossConfig {
        beta: 0.0,
        gamma: 0.0,
        n_negatives: loss.n_negatives,
        kappa: loss.kappa,
        diversity_weight: loss.diversity_weight,
        ..cluster_only
    };
    let ccc = LossConfig {
        n_negatives: loss.n_negatives,
        kappa: loss.kappa,
        diversity_weight: loss.diversity_weight,
        ..LossConfig::ccc(cf, sf, true)
    };
    vec![
        ("baseline".into(), mk(Recipe::Identity, baseline)),
        ("augmentation-only".into(), mk(Recipe::II, aug_only)),
        ("cluster-only".into(), mk(Recipe::Identity, cluster_only)),
        ("ccc-pooled".into(), mk(Recipe::II, ccc)),
    ]
}

/// Two short synthetic utterances of different lengths.
fn tiny_batch(seed: u64) -> Vec<AudioSample> {
    [(0usize, 230usize), (3, 190)]
        .iter()
        .enumerate()
        .map(|(i, (class, len))| {
            let mut r = rng::stream(seed, &[rng::purpose::SYNTH, 1_000 + i as u64]);
            AudioSample::new(format!("tiny-{i}"), synth_clip(*class, *len, 16_000, &mut r), 16_000).expect("bounded")
        })
        .collect()
}

/// Moves the parameters off the initial point. Zero biases make layer norm
/// act on constant vectors over cropped (zeroed) stretches, where the eps term dominates
/// and finite differences lose accuracy.
fn jitter(params: &mut Params<f64>, seed: u64) {
    let mut r = rng::stream(seed, &[rng::purpose::INIT, rng::tag("gradcheck-jitter")]);
    let normal = Normal::new(0.0, GRADCHECK_JITTER).expect("positive std");
    for (_, t) in params.entries_mut() {
        for v in t.data_mut() {
            *v += normal.sample(&mut r);
        }
    }
}

/// Max relative error of every parameter gradient of the full objective,
/// with argmax quantization, per configuration.
pub fn gradcheck_cmd(base: &TrainConfig) -> Result<Vec<GradcheckRow>> {
    let clips = tiny_batch(base.seed);
    gradcheck_configs(base)
        .into_iter()
        .map(|(name, cfg)| {
            let augmenter = build_augmenter(&cfg, 16_000)?;
            let batches = make_batches(&clips, clips.len());
            let (x, x_aug) = prepare_views(&cfg, &clips, &augmenter, &batches[0], 0)?;
            let mut params = initial_params(&cfg)?.cast::<f64>();
            jitter(&mut params, base.seed);
            let (mut g, bound, loss) = loss_graph(&cfg, &params, &x, &x_aug, 0, QuantizerMode::Argmax)?;
            let inputs: Vec<_> = bound.vars().collect();
            let check = grad_check(&mut g, loss.total, &inputs, GRADCHECK_EPSILON)?;
            Ok(GradcheckRow {
                name,
                max_relative_error: check.max_relative_error,
                coordinates: check.coordinates,
                loss: loss.breakdown.l_total,
            })
        })
        .collect()
}
