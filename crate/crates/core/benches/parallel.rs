use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ccc_core::augment::Recipe;
use ccc_core::exec;
use ccc_core::loss::{LossConfig, ScaleFactor};
use ccc_core::trainer::{build_augmenter, initial_params, loss_graph, make_batches, prepare_views, quantizer_mode, synthetic_corpus, TrainConfig};

/// One training step (forward, clustering, loss and backward) on a batch of
/// eight one-second clips, with and without the rayon fan-out.
fn training_step(c: &mut Criterion) {
    let mut cfg = TrainConfig::default();
    cfg.loss = LossConfig::ccc(16, ScaleFactor(Some(0.3)), true);
    cfg.augment.recipe = Recipe::II;
    let clips = synthetic_corpus(8, 0).0;
    let augmenter = build_augmenter(&cfg, 16_000).unwrap();
    let batches = make_batches(&clips, 8);
    let (x, x_aug) = prepare_views(&cfg, &clips, &augmenter, &batches[0], 0).unwrap();
    let params = initial_params(&cfg).unwrap();

    let mut group = c.benchmark_group("training_step");
    group.sample_size(20);
    for parallel in [false, true] {
        let name = if parallel { "parallel" } else { "sequential" };
        group.bench_with_input(BenchmarkId::from_parameter(name), &parallel, |b, &p| {
            exec::set_parallel(p);
            b.iter(|| {
                let (g, _, loss) = loss_graph(&cfg, &params, &x, &x_aug, 0, quantizer_mode(&cfg, 0)).unwrap();
                g.backward(loss.total).unwrap()
            });
        });
    }
    exec::set_parallel(true);
    group.finish();
}

criterion_group!(benches, training_step);
criterion_main!(benches);
