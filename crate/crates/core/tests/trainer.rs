use std::path::Path;

use ccc_core::audio_io::read_metrics;
use ccc_core::loss::{LossConfig, ScaleFactor};
use ccc_core::augment::Recipe;
use ccc_core::trainer::*;
use ccc_core::Error;

fn toy(corpus: &Path, out: &Path, steps: usize) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.loss = LossConfig::ccc(16, ScaleFactor(Some(0.3)), true);
    c.augment.recipe = Recipe::II;
    c.batch_size = 4;
    c.lr_schedule.total_updates = steps;
    c.lr_schedule.warmup_updates = steps / 2;
    c.checkpoint_every = 2;
    c.paths.corpus_dir = Some(corpus.to_path_buf());
    c.paths.out_dir = out.to_path_buf();
    c
}

#[test]
fn zero_updates_writes_initial_checkpoint_and_empty_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    write_synthetic(&corpus, 8, 0).unwrap();
    let cfg = toy(&corpus, &dir.path().join("run"), 0);
    let s = pretrain(&cfg).unwrap();
    assert_eq!(s.steps, 0);
    assert!(s.first.is_none());
    assert!(read_metrics(&s.metrics_path).unwrap().is_empty());
    assert!(dir.path().join("run").join(checkpoint_name(0)).exists());
    let (_, a, _) = load_checkpoint(dir.path().join("run").join(checkpoint_name(0))).unwrap();
    let (_, b, ck) = load_checkpoint(&s.final_checkpoint).unwrap();
    assert_eq!(ck.step, 0);
    assert_eq!(a.entries(), b.entries());
}

#[test]
fn runs_are_bitwise_reproducible_and_checkpoints_replay_the_loss() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    write_synthetic(&corpus, 12, 0).unwrap();
    let a = toy(&corpus, &dir.path().join("a"), 4);
    let b = toy(&corpus, &dir.path().join("b"), 4);
    pretrain(&a).unwrap();
    pretrain(&b).unwrap();
    let ma = std::fs::read(dir.path().join("a").join(METRICS_FILE)).unwrap();
    let mb = std::fs::read(dir.path().join("b").join(METRICS_FILE)).unwrap();
    assert_eq!(ma, mb);

    let rows = read_metrics(dir.path().join("a").join(METRICS_FILE)).unwrap();
    assert_eq!(rows.len(), 4);
    let clips = load_corpus(&a).unwrap();
    for step in [0usize, 2] {
        let (_, params, ck) = load_checkpoint(dir.path().join("a").join(checkpoint_name(step))).unwrap();
        assert_eq!(ck.step, step);
        let replay = eval_step(&a, &params, &clips, step).unwrap();
        assert_eq!(replay.l_total.to_bits(), rows[step].l_total.to_bits());
    }
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    write_synthetic(&corpus, 8, 1).unwrap();
    let cfg = toy(&corpus, &dir.path().join("p"), 2);
    pretrain(&cfg).unwrap();
    ccc_core::exec::set_parallel(false);
    let seq = toy(&corpus, &dir.path().join("s"), 2);
    let r = pretrain(&seq);
    ccc_core::exec::set_parallel(true);
    r.unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("p").join(METRICS_FILE)).unwrap(),
        std::fs::read(dir.path().join("s").join(METRICS_FILE)).unwrap()
    );
}

#[test]
fn probe_is_deterministic_and_needs_two_classes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    write_synthetic(&corpus, 16, 2).unwrap();
    let cfg = toy(&corpus, &dir.path().join("run"), 0);
    let s = pretrain(&cfg).unwrap();
    let a = probe_checkpoint(&s.final_checkpoint, &corpus).unwrap();
    let b = probe_checkpoint(&s.final_checkpoint, &corpus).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.classes, 4);
    assert_eq!(a.chance, 0.25);
    assert!((0.0..=1.0).contains(&a.accuracy));

    let (model, params, _) = load_checkpoint(&s.final_checkpoint).unwrap();
    let one_class: Vec<_> = labeled_dir(&corpus).unwrap().into_iter().filter(|(_, l)| *l == 1).collect();
    assert!(matches!(probe(&model, &params, &one_class), Err(Error::TooFewClasses(1))));
}

#[test]
fn gradcheck_reports_four_finite_rows() {
    let rows = gradcheck_cmd(&TrainConfig::default()).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["baseline", "augmentation-only", "cluster-only", "ccc-pooled"]);
    for r in &rows {
        assert!(r.max_relative_error.is_finite() && r.loss.is_finite());
        assert_eq!(r.coordinates, rows[0].coordinates);
    }
}

#[test]
fn invalid_config_is_rejected_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TrainConfig::default();
    cfg.lr_schedule.warmup_updates = 400;
    cfg.paths.out_dir = dir.path().join("never");
    assert!(matches!(pretrain(&cfg), Err(Error::InvalidConfig(_))));
    assert!(!dir.path().join("never").exists());
}
