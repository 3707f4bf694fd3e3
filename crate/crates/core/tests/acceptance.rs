//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ccc_core::audio_io::{read_metrics, AudioSample};
use ccc_core::augment::{convolve_rir, AugmentConfig, AugmentEvent, Augmenter, Recipe};
use ccc_core::clustering::{cluster_utterance, kmeans_cosine, ClusterConfig};
use ccc_core::loss::{contrastive_loss, diversity_loss, standard_contrastive_loss, LossConfig, ScaleFactor};
use ccc_core::model::QuantizerMode;
use ccc_core::repro::{run_grid, AblationGrid};
use ccc_core::trainer::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_instance(r: &mut ChaCha8Rng) -> (f64, Vec<f64>, Vec<bool>) {
    let n = r.gen_range(1..40);
    (
        r.gen_range(-1.0..1.0),
        (0..n).map(|_| r.gen_range(-1.0..1.0)).collect(),
        (0..n).map(|_| r.gen_bool(0.4)).collect(),
    )
}

fn ccc_toy() -> TrainConfig {
    let mut c = TrainConfig::default();
    c.loss = LossConfig::ccc(16, ScaleFactor(Some(0.3)), true);
    c.augment.recipe = Recipe::II;
    c
}

fn batches_of(cfg: &TrainConfig, clips: &[AudioSample], n: usize) -> Vec<Vec<usize>> {
    make_batches(clips, cfg.batch_size).into_iter().take(n).collect()
}

fn reduction_identity() -> Outcome {
    let t = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(101);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (p, n, f) = random_instance(&mut r);
        let a = contrastive_loss(p, &n, &f, ScaleFactor::ONE, 0.1).map_err(|e| e.to_string())?;
        let b = standard_contrastive_loss(p, &n, 0.1).map_err(|e| e.to_string())?;
        mismatches += (a.to_bits() != b.to_bits()) as usize;
    }

    let base = ccc_toy();
    let mut bypass = base.clone();
    bypass.loss.clustering.as_mut().unwrap().cluster_factor = 1;
    let mut off = base.clone();
    off.loss.clustering = None;
    let clips = synthetic_corpus(24, 0).0;
    let augmenter = build_augmenter(&base, 16_000).map_err(|e| e.to_string())?;
    let params = initial_params(&base).map_err(|e| e.to_string())?;
    let mut pipeline_mismatches = 0;
    for (step, idx) in batches_of(&base, &clips, 3).iter().enumerate() {
        let (x, xa) = prepare_views(&base, &clips, &augmenter, idx, step).map_err(|e| e.to_string())?;
        let mode = quantizer_mode(&base, step);
        let (_, _, a) = loss_graph(&bypass, &params, &x, &xa, step, mode).map_err(|e| e.to_string())?;
        let (_, _, b) = loss_graph(&off, &params, &x, &xa, step, mode).map_err(|e| e.to_string())?;
        let (a, b) = (a.breakdown, b.breakdown);
        if [a.l_total, a.l_c, a.l_cross, a.l_cross_prime].map(f64::to_bits) != [b.l_total, b.l_c, b.l_cross, b.l_cross_prime].map(f64::to_bits) {
            pipeline_mismatches += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        mismatches == 0 && pipeline_mismatches == 0 && secs < 60.0,
        format!("scalar mismatches {mismatches}/1000, CF=1 pipeline mismatches {pipeline_mismatches}/3 batches, {secs:.1}s"),
    )
}

/// `-ln softmax` of the positive over the positive and kept negatives.
fn info_nce_oracle(p: f64, kept: &[f64], kappa: f64) -> f64 {
    let logits: Vec<f64> = std::iter::once(p).chain(kept.iter().copied()).map(|s| s / kappa).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    lse - p / kappa
}

fn discard_equivalence() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (p, n, f) = random_instance(&mut r);
        let a = contrastive_loss(p, &n, &f, ScaleFactor::NEG_INFINITY, 0.1).map_err(|e| e.to_string())?;
        let kept: Vec<f64> = n.iter().zip(&f).filter(|(_, f)| !**f).map(|(s, _)| *s).collect();
        worst = worst.max((a - info_nce_oracle(p, &kept, 0.1)).abs());
    }
    check(worst < 1e-12, format!("max |Δ| {worst:.2e} over 1000 instances"))
}

fn gradient_suite() -> Outcome {
    let rows = gradcheck_cmd(&TrainConfig::default()).map_err(|e| e.to_string())?;
    let detail = rows.iter().map(|r| format!("{} {:.2e}", r.name, r.max_relative_error)).collect::<Vec<_>>().join(", ");
    check(rows.len() == 4 && rows.iter().all(|r| r.max_relative_error < 1e-4), detail)
}

fn identity_collapse() -> Outcome {
    let mut cfg = TrainConfig::default();
    cfg.augment.recipe = Recipe::Identity;
    cfg.loss.beta = 0.5;
    cfg.loss.gamma = 0.5;
    cfg.loss.share_negative_draws = true;
    let clips = synthetic_corpus(40, 3).0;
    let augmenter = build_augmenter(&cfg, 16_000).map_err(|e| e.to_string())?;
    let params = initial_params(&cfg).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let batches = batches_of(&cfg, &clips, usize::MAX);
    for (step, idx) in batches.iter().enumerate() {
        let (x, xa) = prepare_views(&cfg, &clips, &augmenter, idx, step).map_err(|e| e.to_string())?;
        let (_, _, l) = loss_graph(&cfg, &params, &x, &xa, step, QuantizerMode::Argmax).map_err(|e| e.to_string())?;
        let b = l.breakdown;
        worst = worst.max((b.l_cross - b.l_c).abs()).max((b.l_cross_prime - b.l_c).abs());
    }
    check(worst < 1e-6, format!("max term gap {worst:.2e} over {} batches", batches.len()))
}

fn kmeans_properties() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(505);
    let point = |r: &mut ChaCha8Rng, d: usize| (0..d).map(|_| r.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let mut monotone = true;
    let mut max_iter = 0;
    for t in 0..100 {
        let n = 10 + t % 50;
        let pts: Vec<Vec<f64>> = (0..n).map(|_| point(&mut r, 8)).collect();
        let a = kmeans_cosine(&pts, 2 + t % 7, 100, &mut r).map_err(|e| e.to_string())?;
        monotone &= a.history.windows(2).all(|w| w[1] <= w[0] + 1e-6);
        max_iter = max_iter.max(a.iterations);
    }

    let mut k_ok = true;
    for (nf, cf, m) in [(49, 8, 20), (49, 16, 20), (49, 24, 20), (12, 8, 2), (100, 16, 3), (7, 24, 5)] {
        let q: Vec<Vec<f64>> = (0..m).map(|_| point(&mut r, 6)).collect();
        let cfg = ClusterConfig { cluster_factor: cf, pooled: false, ..ClusterConfig::default() };
        let u = cluster_utterance(&cfg, &q, &q, nf, &mut r).map_err(|e| e.to_string())?.unwrap();
        k_ok &= u.k == (nf.div_ceil(cf)).clamp(1, m);
    }

    let pad = point(&mut r, 8);
    let mut pad_ok = true;
    for _ in 0..20 {
        let mut pts: Vec<Vec<f64>> = (0..20).map(|_| point(&mut r, 8)).collect();
        pts.extend(std::iter::repeat_n(pad.clone(), 6));
        let a = kmeans_cosine(&pts, 4, 100, &mut r).map_err(|e| e.to_string())?;
        pad_ok &= a.assignments[20..].iter().all(|&c| c == a.assignments[20]);
    }

    let mut recovered = 0;
    for _ in 0..100 {
        let u = point(&mut r, 8);
        let mut pts = Vec::new();
        for i in 0..30 {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            pts.push(u.iter().map(|v| sign * v + r.gen_range(-0.1..0.1)).collect::<Vec<f64>>());
        }
        let a = kmeans_cosine(&pts, 2, 100, &mut r).map_err(|e| e.to_string())?;
        let same = |i: usize, j: usize| a.assignments[i] == a.assignments[j];
        recovered += (0..30).all(|i| same(i, i % 2) && !same(i, 1 - i % 2)) as usize;
    }
    check(
        monotone && max_iter <= 100 && k_ok && pad_ok && recovered == 100,
        format!("monotone {monotone}, max iterations {max_iter}, k rule {k_ok}, padding co-clusters {pad_ok}, planted partitions {recovered}/100"),
    )
}

/// Full linear convolution by the definition, truncated and peak-matched.
fn convolve_oracle(x: &[f32], h: &[f32]) -> Vec<f64> {
    let y: Vec<f64> = (0..x.len())
        .map(|n| (0..h.len().min(n + 1)).map(|k| h[k] as f64 * x[n - k] as f64).sum())
        .collect();
    let pin = x.iter().fold(0.0f64, |m, v| m.max((*v as f64).abs()));
    let pout = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    y.into_iter().map(|v| v * pin / pout).collect()
}

fn augmentation_exactness() -> Outcome {
    let rate = 16_000;
    let clips = synthetic_corpus(8, 9).0;
    let augmenter = Augmenter::with_synthetic_banks(AugmentConfig::default(), rate).map_err(|e| e.to_string())?;
    let mut r = ChaCha8Rng::seed_from_u64(606);

    let short: Vec<AudioSample> = clips
        .iter()
        .map(|c| AudioSample::new(c.id.clone(), c.samples[..1_600].to_vec(), rate).unwrap())
        .collect();
    let (mut snr_worst, mut mixes) = (0.0f64, 0usize);
    let mut applied = [0usize; 3];
    let draws = 10_000;
    for i in 0..draws {
        let (_, trace) = augmenter.apply_traced(&short[i % short.len()], &mut r).map_err(|e| e.to_string())?;
        for e in trace.events {
            match e {
                AugmentEvent::Noise { background, applied: true, snr_db, measured_snr_db, .. } => {
                    snr_worst = snr_worst.max((snr_db - measured_snr_db).abs());
                    mixes += 1;
                    applied[if background { 2 } else { 0 }] += 1;
                }
                AugmentEvent::Reverb { applied: true, .. } => applied[1] += 1,
                _ => {}
            }
        }
    }
    let rates = applied.map(|a| a as f64 / draws as f64);
    let rates_ok = rates.iter().zip([0.6, 0.7, 0.8]).all(|(got, want)| (got - want).abs() <= 0.02);

    let mut conv_worst = 0.0f64;
    for rir in &augmenter.rir_bank {
        let x = &clips[0].samples[..4_000];
        let fast = convolve_rir(x, rir).map_err(|e| e.to_string())?;
        for (a, b) in fast.iter().zip(convolve_oracle(x, rir)) {
            conv_worst = conv_worst.max((*a as f64 - b).abs());
        }
    }

    let crop = Augmenter::with_synthetic_banks(AugmentConfig { recipe: Recipe::I, ..AugmentConfig::default() }, rate)
        .map_err(|e| e.to_string())?;
    let mut crop_ok = true;
    for c in &clips {
        let (out, trace) = crop.apply_traced(c, &mut r).map_err(|e| e.to_string())?;
        let want = (0.25 * c.len() as f64).round() as usize;
        crop_ok &= match trace.events.as_slice() {
            [AugmentEvent::Crop { start, len }] => {
                let region = *start..start + len;
                *len == want
                    && out.samples[region.clone()].iter().all(|v| *v == 0.0)
                    && (0..c.len()).filter(|i| !region.contains(i)).all(|i| out.samples[i] == c.samples[i])
            }
            _ => false,
        };
    }
    check(
        snr_worst < 1e-6 && conv_worst < 1e-6 && crop_ok && rates_ok,
        format!(
            "SNR error {snr_worst:.2e} dB over {mixes} mixes, RIR error {conv_worst:.2e}, crop exact {crop_ok}, rates {:.3}/{:.3}/{:.3}",
            rates[0], rates[1], rates[2]
        ),
    )
}

fn diversity_oracle(groups: &[Vec<f64>], v: usize) -> f64 {
    let mut perplexity = 0.0;
    for probs in groups {
        let rows = probs.len() / v;
        let h: f64 = (0..v)
            .map(|e| (0..rows).map(|r| probs[r * v + e]).sum::<f64>() / rows as f64)
            .filter(|p| *p > 0.0)
            .map(|p| -p * p.ln())
            .sum();
        perplexity += h.exp();
    }
    let gv = (groups.len() * v) as f64;
    (gv - perplexity) / gv
}

fn diversity_bounds() -> Outcome {
    let mut worst_bounds = 0.0f64;
    for v in [2usize, 4, 16, 320] {
        let uniform = vec![1.0 / v as f64; 5 * v];
        let mut one_hot = vec![0.0; 5 * v];
        (0..5).for_each(|r| one_hot[r * v + v / 2] = 1.0);
        let u = diversity_loss(&[uniform.clone(), uniform], v).map_err(|e| e.to_string())?;
        let o = diversity_loss(&[one_hot.clone(), one_hot], v).map_err(|e| e.to_string())?;
        worst_bounds = worst_bounds.max(u.abs()).max((o - (1.0 - 1.0 / v as f64)).abs());
    }
    let mut r = ChaCha8Rng::seed_from_u64(707);
    let mut worst = 0.0f64;
    for t in 0..200 {
        let v = 2 + t % 20;
        let groups: Vec<Vec<f64>> = (0..1 + t % 3)
            .map(|_| {
                (0..1 + t % 11)
                    .flat_map(|_| {
                        let e: Vec<f64> = (0..v).map(|_| (4.0 * r.gen_range(-1.0f64..1.0)).exp()).collect();
                        let s: f64 = e.iter().sum();
                        e.into_iter().map(move |x| x / s)
                    })
                    .collect()
            })
            .collect();
        let a = diversity_loss(&groups, v).map_err(|e| e.to_string())?;
        worst = worst.max((a - diversity_oracle(&groups, v)).abs());
    }
    check(worst_bounds < 1e-12 && worst < 1e-9, format!("bounds error {worst_bounds:.2e}, oracle error {worst:.2e} over 200 cases"))
}

fn toy_training(dir: &std::path::Path) -> Outcome {
    let mut cfg = ccc_toy();
    cfg.paths.out_dir = dir.join("ccc");
    let t = Instant::now();
    let s = pretrain(&cfg).map_err(|e| e.to_string())?;
    let (first, last) = (s.first.unwrap(), s.last.unwrap());
    let labeled = labeled_corpus(&cfg).map_err(|e| e.to_string())?;
    let probe_at = |name: &str| -> Result<f64, String> {
        let (model, params, _) = load_checkpoint(cfg.paths.out_dir.join(name)).map_err(|e| e.to_string())?;
        Ok(probe(&model, &params, &labeled).map_err(|e| e.to_string())?.accuracy)
    };
    let random = probe_at(&checkpoint_name(0))?;
    let trained = probe_at(FINAL_CHECKPOINT)?;
    let secs = t.elapsed().as_secs_f64();
    let chance = 1.0 / (cfg.loss.n_negatives + 1) as f64;
    check(
        last.l_total < first.l_total && last.contrastive_accuracy > 3.0 * chance && trained > random && secs < 900.0,
        format!(
            "l_total {:.3} -> {:.3}, accuracy {:.3} (3x chance {:.3}), probe {random:.3} -> {trained:.3}, {secs:.0}s",
            first.l_total,
            last.l_total,
            last.contrastive_accuracy,
            3.0 * chance
        ),
    )
}

fn determinism(dir: &std::path::Path) -> Outcome {
    let run = |name: &str| -> Result<TrainConfig, String> {
        let mut cfg = ccc_toy();
        cfg.lr_schedule.total_updates = 20;
        cfg.lr_schedule.warmup_updates = 15;
        cfg.checkpoint_every = 10;
        cfg.paths.out_dir = dir.join(name);
        pretrain(&cfg).map_err(|e| e.to_string())?;
        Ok(cfg)
    };
    let a = run("det-a")?;
    run("det-b")?;
    let ma = std::fs::read(dir.join("det-a").join(METRICS_FILE)).map_err(|e| e.to_string())?;
    let mb = std::fs::read(dir.join("det-b").join(METRICS_FILE)).map_err(|e| e.to_string())?;
    let rows = read_metrics(dir.join("det-a").join(METRICS_FILE)).map_err(|e| e.to_string())?;
    let clips = load_corpus(&a).map_err(|e| e.to_string())?;
    let (_, params, _) = load_checkpoint(dir.join("det-a").join(checkpoint_name(10))).map_err(|e| e.to_string())?;
    let replay = eval_step(&a, &params, &clips, 10).map_err(|e| e.to_string())?;
    let exact = replay.l_total.to_bits() == rows[10].l_total.to_bits();
    check(ma == mb && exact, format!("metrics identical {}, replayed step-11 loss exact {exact}", ma == mb))
}

fn grid_reproduction(dir: &std::path::Path) -> Outcome {
    let mut base = TrainConfig::default();
    base.lr_schedule.total_updates = 3;
    base.lr_schedule.warmup_updates = 2;
    let grid = AblationGrid::clustering_full(&base);
    let rows = run_grid(&grid, &dir.join("grid"), |_| {});
    let failed: Vec<&str> = rows.iter().filter(|r| r.error.is_some()).map(|r| r.config_label.as_str()).collect();
    let labels_ok = rows.iter().zip(&grid.cells).all(|(r, c)| r.config_label == c.label);
    check(
        rows.len() == 13 && failed.is_empty() && labels_ok,
        format!("{} rows ({} clustering + baseline), failed {failed:?}", rows.len(), rows.len().saturating_sub(1)),
    )
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 reduction identity", Box::new(reduction_identity)),
        ("2 discard equivalence", Box::new(discard_equivalence)),
        ("3 gradient suite", Box::new(gradient_suite)),
        ("4 identity-augmentation collapse", Box::new(identity_collapse)),
        ("5 k-means properties", Box::new(kmeans_properties)),
        ("6 augmentation exactness", Box::new(augmentation_exactness)),
        ("7 diversity loss bounds", Box::new(diversity_bounds)),
        ("8 toy training signal", Box::new(|| toy_training(dir.path()))),
        ("9 determinism", Box::new(|| determinism(dir.path()))),
        ("10 grid reproduction", Box::new(|| grid_reproduction(dir.path()))),
    ];
    let mut failures = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
