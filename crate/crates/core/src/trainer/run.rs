use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::audio_io::{
    batch_and_pad, config_hash, load_dir, AudioSample, Checkpoint, MaskedBatch, MetricsRow, MetricsWriter,
};
use crate::augment::{synthetic_noise_bank, synthetic_rir_bank, Augmenter};
use crate::autodiff::{Graph, Real, Tensor};
use crate::error::{Error, Result};
use crate::exec;
use crate::loss::{cluster_batch, combined_loss, draw_negatives, LossBreakdown, LossGraph};
use crate::model::{forward_pair, init_params, mask_batch, Bound, ModelConfig, Params, QuantizerMode};
use crate::rng::{self, purpose};
use crate::trainer::{synthetic_corpus, AdamW, QuantizerChoice, TrainConfig};

/// Clips used when no corpus directory is configured.
pub const SYNTHETIC_CLIPS: usize = 200;
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_name(step: usize) -> String {
    format!("checkpoint-{step}.ckpt")
}

pub fn load_corpus(config: &TrainConfig) -> Result<Vec<AudioSample>> {
    let clips = match &config.paths.corpus_dir {
        Some(dir) => load_dir(dir)?,
        None => synthetic_corpus(SYNTHETIC_CLIPS, config.seed).0,
    };
    if clips.is_empty() {
        return Err(Error::EmptyCorpus(format!("{:?}", config.paths.corpus_dir)));
    }
    Ok(clips)
}

/// Augmenter with banks from the configured directories, or synthetic banks
/// where a directory is not set.
pub fn build_augmenter(config: &TrainConfig, sample_rate_hz: u32) -> Result<Augmenter> {
    let seed = config.augment.seed ^ config.seed;
    let noise = match &config.paths.noise_dir {
        Some(dir) => load_dir(dir)?,
        None => synthetic_noise_bank(seed, 8, sample_rate_hz as usize * 2, sample_rate_hz),
    };
    let rirs = match &config.paths.rir_dir {
        Some(dir) => load_dir(dir)?.into_iter().map(|s| s.samples).collect(),
        None => synthetic_rir_bank(seed, 8, sample_rate_hz),
    };
    Augmenter::new(config.augment.clone(), noise, rirs)
}

/// Clip indices sorted by length (then id) and cut into batches.
pub fn make_batches(clips: &[AudioSample], batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..clips.len()).collect();
    order.sort_by(|a, b| clips[*a].len().cmp(&clips[*b].len()).then_with(|| clips[*a].id.cmp(&clips[*b].id)));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Batch used at `step`: batches are visited in a fresh random order every
/// epoch.
pub fn batch_for_step(batches: &[Vec<usize>], seed: u64, step: usize) -> &[usize] {
    let epoch = step / batches.len();
    let mut order: Vec<usize> = (0..batches.len()).collect();
    order.shuffle(&mut rng::stream(seed, &[purpose::SHUFFLE, epoch as u64]));
    &batches[order[step % batches.len()]]
}

/// Original and augmented padded batches with shared masks.
pub fn prepare_views(
    config: &TrainConfig,
    clips: &[AudioSample],
    augmenter: &Augmenter,
    indices: &[usize],
    step: usize,
) -> Result<(MaskedBatch, MaskedBatch)> {
    let originals: Vec<AudioSample> = indices.iter().map(|i| clips[*i].clone()).collect();
    let seed = config.seed ^ config.augment.seed;
    let augmented = exec::map(&originals, |_, x| {
        let mut r = rng::stream(seed, &[purpose::AUGMENT, step as u64, rng::tag(&x.id)]);
        augmenter.apply(x, &mut r)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let geometry = config.model.geometry();
    let mut x = batch_and_pad(&originals, &geometry)?;
    let mut x_aug = batch_and_pad(&augmented, &geometry)?;
    mask_batch(&mut x, &config.model.mask, &mut rng::stream(config.seed, &[purpose::MASK, step as u64]))?;
    x_aug.mask_indices = x.mask_indices.clone();
    Ok((x, x_aug))
}

pub fn quantizer_mode(config: &TrainConfig, step: usize) -> QuantizerMode {
    match config.quantizer {
        QuantizerChoice::Gumbel => QuantizerMode::Gumbel {
            temperature: config.model.quantizer.temperature(step),
        },
        QuantizerChoice::Argmax => QuantizerMode::Argmax,
    }
}

/// Builds the full objective for one step; clustering and negatives are
/// drawn from streams keyed by `step`.
pub fn loss_graph<T: Real>(
    config: &TrainConfig,
    params: &Params<T>,
    x: &MaskedBatch,
    x_aug: &MaskedBatch,
    step: usize,
    mode: QuantizerMode,
) -> Result<(Graph<T>, Bound, LossGraph)> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let s = step as u64;
    let outputs = forward_pair(
        &mut g,
        &config.model,
        &bound,
        x,
        x_aug,
        mode,
        &mut rng::stream(config.seed, &[purpose::GUMBEL, s]),
    )?;
    let clusters = cluster_batch(&g, &outputs, &config.loss, config.seed, s)?;
    let counts: Vec<usize> = outputs.utterances.iter().map(|u| u.mask.len()).collect();
    let negatives = draw_negatives(&counts, &config.loss, &mut rng::stream(config.seed, &[purpose::NEGATIVES, s]))?;
    let loss = combined_loss(&mut g, &outputs, &config.loss, &clusters, &negatives)?;
    Ok((g, bound, loss))
}

/// Loss of `params` on the batch of `step`, without updating anything.
pub fn eval_step(config: &TrainConfig, params: &Params<f32>, clips: &[AudioSample], step: usize) -> Result<LossBreakdown> {
    let augmenter = build_augmenter(config, clips[0].sample_rate_hz)?;
    let batches = make_batches(clips, config.batch_size);
    let (x, x_aug) = prepare_views(config, clips, &augmenter, batch_for_step(&batches, config.seed, step), step)?;
    let (_, _, loss) = loss_graph(config, params, &x, &x_aug, step, quantizer_mode(config, step))?;
    Ok(loss.breakdown)
}

pub fn initial_params(config: &TrainConfig) -> Result<Params<f32>> {
    init_params(&config.model, &mut rng::stream(config.seed, &[purpose::INIT]))
}

pub fn save_checkpoint(path: &Path, config: &TrainConfig, params: &Params<f32>, step: usize) -> Result<()> {
    Checkpoint {
        step,
        config_hash: config_hash(&serde_json::to_value(config)?),
        model_config: serde_json::to_value(&config.model)?,
        tensors: params.entries().to_vec(),
    }
    .save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, Params<f32>, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    let model: ModelConfig = serde_json::from_value(ck.model_config.clone())?;
    model.validate()?;
    let params = Params::from_entries(ck.tensors.clone());
    params.check_layout(&model)?;
    Ok((model, params, ck))
}

#[derive(Clone, Debug)]
pub struct PretrainSummary {
    pub steps: usize,
    pub first: Option<MetricsRow>,
    pub last: Option<MetricsRow>,
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub parameters: usize,
    pub seconds: f64,
}

fn metrics_row(step: usize, b: &LossBreakdown) -> MetricsRow {
    MetricsRow {
        step,
        l_c: b.l_c,
        l_cross: b.l_cross,
        l_cross_prime: b.l_cross_prime,
        l_div: b.l_diversity,
        l_total: b.l_total,
        contrastive_accuracy: b.contrastive_accuracy,
        codebook_perplexity: b.codebook_perplexity,
    }
}

/// Full pre-training run. Writes `metrics.jsonl` (one row per update),
/// `checkpoint-0.ckpt`, periodic checkpoints and `final.ckpt` into
/// `paths.out_dir`.
pub fn pretrain(config: &TrainConfig) -> Result<PretrainSummary> {
    pretrain_with(config, |_| {})
}

/// [`pretrain`] with a callback per metrics row.
pub fn pretrain_with(config: &TrainConfig, mut on_step: impl FnMut(&MetricsRow)) -> Result<PretrainSummary> {
    config.validate()?;
    let started = Instant::now();
    let out = &config.paths.out_dir;
    std::fs::create_dir_all(out)?;
    let clips = load_corpus(config)?;
    let augmenter = build_augmenter(config, clips[0].sample_rate_hz)?;
    let batches = make_batches(&clips, config.batch_size);
    let mut params = initial_params(config)?;
    let mut opt = AdamW::new(config.optimizer.clone(), params.entries().iter().map(|(_, t)| t.numel()));
    let metrics_path = out.join(crate::trainer::run::METRICS_FILE);
    let mut metrics = MetricsWriter::create(&metrics_path)?;
    save_checkpoint(&out.join(checkpoint_name(0)), config, &params, 0)?;

    let (mut first, mut last) = (None, None);
    let total = config.lr_schedule.total_updates;
    for step in 0..total {
        let indices = batch_for_step(&batches, config.seed, step);
        let (x, x_aug) = prepare_views(config, &clips, &augmenter, indices, step)?;
        let (g, bound, loss) = loss_graph(config, &params, &x, &x_aug, step, quantizer_mode(config, step))?;
        if !loss.breakdown.l_total.is_finite() {
            let dump = out.join(format!("nonfinite-step-{}.json", step + 1));
            let detail = serde_json::json!({ "step": step + 1, "batch": x.ids, "loss": loss.breakdown });
            std::fs::write(&dump, serde_json::to_vec_pretty(&detail)?)?;
            return Err(Error::NonFiniteLoss {
                step: step + 1,
                batch: x.ids.clone(),
            });
        }
        let grads = g.backward(loss.total)?;
        let grads: Vec<Tensor<f32>> = bound.vars().map(|v| grads.wrt(v)).collect();
        let lr = config.lr_schedule.lr(step + 1);
        opt.step(params.entries_mut().iter_mut().map(|(_, t)| t), &grads, lr);

        let row = metrics_row(step + 1, &loss.breakdown);
        metrics.append(&row)?;
        on_step(&row);
        first.get_or_insert_with(|| row.clone());
        last = Some(row);
        if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 {
            save_checkpoint(&out.join(checkpoint_name(step + 1)), config, &params, step + 1)?;
        }
    }
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    save_checkpoint(&final_checkpoint, config, &params, total)?;
    Ok(PretrainSummary {
        steps: total,
        first,
        last,
        metrics_path,
        final_checkpoint,
        parameters: params.numel(),
        seconds: started.elapsed().as_secs_f64(),
    })
}
