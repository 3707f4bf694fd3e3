//! Linear frame classifier on frozen context representations.

use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;

use crate::audio_io::{load_dir, AudioSample};
use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{context_network, feature_encoder, ModelConfig, Params};
use crate::trainer::{load_checkpoint, read_labels, synthetic_corpus, AdamW, OptimizerConfig, TrainConfig, SYNTHETIC_CLIPS};

const PROBE_STEPS: usize = 300;
const PROBE_LR: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub chance: f64,
    pub classes: usize,
    pub train_frames: usize,
    pub test_frames: usize,
}

/// Unmasked context frames of one clip, `[NF, d_context]`.
pub fn context_frames(config: &ModelConfig, params: &Params<f32>, clip: &AudioSample) -> Result<Tensor<f32>> {
    let mut g = Graph::<f32>::new();
    let bound = params.bind(&mut g, false);
    let z = feature_encoder(&mut g, config, &bound, &clip.samples)?;
    let nf = g.value(z).rows();
    let c = context_network(&mut g, config, &bound, z, &[], nf)?;
    Ok(g.value(c).clone())
}

pub fn probe_checkpoint(checkpoint: impl AsRef<Path>, corpus: impl AsRef<Path>) -> Result<ProbeReport> {
    let (config, params, _) = load_checkpoint(checkpoint)?;
    probe(&config, &params, &labeled_dir(corpus)?)
}

/// Clips of a directory that appear in its labels file.
pub fn labeled_dir(corpus: impl AsRef<Path>) -> Result<Vec<(AudioSample, usize)>> {
    let labels = read_labels(&corpus)?;
    let by_id: HashMap<&str, usize> = labels.iter().map(|l| (l.id.as_str(), l.label)).collect();
    Ok(load_dir(&corpus)?
        .into_iter()
        .filter_map(|c| by_id.get(c.id.as_str()).map(|l| (c.clone(), *l)))
        .collect())
}

/// Labeled clips of the corpus a run trains on: the configured directory,
/// or the built-in synthetic corpus.
pub fn labeled_corpus(config: &TrainConfig) -> Result<Vec<(AudioSample, usize)>> {
    match &config.paths.corpus_dir {
        Some(dir) => labeled_dir(dir),
        None => {
            let (clips, labels) = synthetic_corpus(SYNTHETIC_CLIPS, config.seed);
            Ok(clips.into_iter().zip(labels).map(|(c, l)| (c, l.label)).collect())
        }
    }
}

/// Fits softmax regression on standardized context frames of the training
/// clips and reports frame accuracy on held-out clips. Within each class
/// every fourth clip (in the given order) is held out.
pub fn probe(config: &ModelConfig, params: &Params<f32>, clips: &[(AudioSample, usize)]) -> Result<ProbeReport> {
    let classes = clips.iter().map(|(_, l)| *l).max().map_or(0, |m| m + 1);
    let distinct = {
        let mut ls: Vec<usize> = clips.iter().map(|(_, l)| *l).collect();
        ls.sort();
        ls.dedup();
        ls.len()
    };
    if distinct < 2 {
        return Err(Error::TooFewClasses(distinct));
    }
    let feats = exec::map(clips, |_, (c, _)| context_frames(config, params, c))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut seen = vec![0usize; classes];
    let mut train = Vec::new();
    let mut test = Vec::new();
    for ((_, label), f) in clips.iter().zip(&feats) {
        let held_out = seen[*label] % 4 == 0;
        seen[*label] += 1;
        for r in 0..f.rows() {
            let row: Vec<f64> = f.row(r).iter().map(|v| *v as f64).collect();
            if held_out {
                test.push((row, *label));
            } else {
                train.push((row, *label));
            }
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyCorpus("probe needs both training and held-out clips".into()));
    }
    let d = train[0].0.len();
    let n = train.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| train.iter().map(|(x, _)| x[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..d)
        .map(|j| (train.iter().map(|(x, _)| (x[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-6))
        .collect();
    let standardize = |rows: &[(Vec<f64>, usize)]| {
        let data = rows
            .iter()
            .flat_map(|(x, _)| x.iter().enumerate().map(|(j, v)| (v - mean[j]) / std[j]))
            .collect();
        Tensor::new(vec![rows.len(), d], data)
    };
    let one_hot = |rows: &[(Vec<f64>, usize)]| {
        let mut y = vec![0.0; rows.len() * classes];
        rows.iter().enumerate().for_each(|(i, (_, l))| y[i * classes + l] = 1.0);
        Tensor::new(vec![rows.len(), classes], y)
    };

    let mut g = Graph::<f64>::new();
    let x = g.constant(standardize(&train)?);
    let y = g.constant(one_hot(&train)?);
    let w = g.input("w", Tensor::zeros(vec![d, classes]), true);
    let b = g.input("b", Tensor::zeros(vec![classes]), true);
    let logits = g.matmul(x, w)?;
    let logits = g.add_row(logits, b)?;
    let p = g.softmax(logits)?;
    let logp = g.log(p)?;
    let picked = g.mul(logp, y)?;
    let ll = g.sum(picked)?;
    let loss = g.scale(ll, -1.0 / n)?;

    let mut wt = Tensor::<f32>::zeros(vec![d, classes]);
    let mut bt = Tensor::<f32>::zeros(vec![classes]);
    let mut opt = AdamW::new(
        OptimizerConfig {
            weight_decay: 0.0,
            ..Default::default()
        },
        [d * classes, classes],
    );
    for _ in 0..PROBE_STEPS {
        g.evaluate(&[("w", wt.cast()), ("b", bt.cast())])?;
        let grads = g.backward(loss)?;
        opt.step([&mut wt, &mut bt], &[grads.wrt(w).cast(), grads.wrt(b).cast()], PROBE_LR);
    }

    let xt = standardize(&test)?;
    let correct = test
        .iter()
        .enumerate()
        .filter(|(i, (_, label))| {
            let row = xt.row(*i);
            let scores: Vec<f64> = (0..classes)
                .map(|c| bt.data()[c] as f64 + (0..d).map(|j| row[j] * wt.data()[j * classes + c] as f64).sum::<f64>())
                .collect();
            crate::autodiff::argmax(&scores) == *label
        })
        .count();
    Ok(ProbeReport {
        accuracy: correct as f64 / test.len() as f64,
        chance: 1.0 / distinct as f64,
        classes: distinct,
        train_frames: train.len(),
        test_frames: test.len(),
    })
}
