use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::audio_io::{batch_and_pad, AudioSample, MaskedBatch};
use crate::autodiff::{grad_check, Graph, Tensor};
use crate::error::Error;

fn clip(id: &str, n: usize, seed: u64) -> AudioSample {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    AudioSample::new(id, (0..n).map(|_| r.gen_range(-0.5..0.5)).collect(), 16_000).unwrap()
}

fn masked(clips: &[AudioSample], masks: Vec<Vec<usize>>) -> MaskedBatch {
    let mut b = batch_and_pad(clips, &ModelConfig::default().geometry()).unwrap();
    b.mask_indices = masks;
    b
}

fn setup() -> (ModelConfig, Params<f32>) {
    let c = ModelConfig::default();
    let p = init_params(&c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    (c, p)
}

#[test]
fn one_second_gives_49_frames() {
    let (c, p) = setup();
    let mut g = Graph::<f32>::new();
    let b = p.bind(&mut g, true);
    let z = feature_encoder(&mut g, &c, &b, &clip("a", 16_000, 0).samples).unwrap();
    assert_eq!(g.value(z).shape(), &[49, 64]);
    let err = feature_encoder(&mut g, &c, &b, &[0.0; 399]).unwrap_err();
    assert!(matches!(err, Error::TooShort { receptive_field: 400, .. }));
}

#[test]
fn silent_input_is_finite() {
    let (c, p) = setup();
    let x = masked(&[AudioSample::new("z", vec![0.0; 4000], 16_000).unwrap()], vec![vec![1, 2, 3]]);
    let mut g = Graph::<f32>::new();
    let b = p.bind(&mut g, true);
    let out = forward_pair(&mut g, &c, &b, &x, &x, QuantizerMode::Argmax, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let u = &out.utterances[0];
    for v in [u.z, u.c, u.q_t, u.c_t_prime] {
        assert!(g.value(v).all_finite());
    }
}

#[test]
fn duplicated_utterance_gives_identical_rows() {
    let (c, p) = setup();
    let a = clip("a", 5000, 3);
    let x = masked(&[a.clone(), a], vec![vec![2, 3, 4], vec![2, 3, 4]]);
    let mut g = Graph::<f32>::new();
    let b = p.bind(&mut g, true);
    let out = forward_pair(&mut g, &c, &b, &x, &x, QuantizerMode::Argmax, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let (u0, u1) = (&out.utterances[0], &out.utterances[1]);
    assert_eq!(g.value(u0.c), g.value(u1.c));
    assert_eq!(g.value(u0.q_t), g.value(u1.q_t));
}

#[test]
fn argmax_quantizer_is_deterministic_and_one_hot() {
    let (c, p) = setup();
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let lat = Tensor::new(vec![12, 64], (0..12 * 64).map(|_| r.gen_range(-1.0f32..1.0)).collect()).unwrap();
    let run = || {
        let mut g = Graph::<f32>::new();
        let b = p.bind(&mut g, true);
        let x = g.constant(lat.clone());
        let q = quantize(&mut g, &c, &b, x, QuantizerMode::Argmax, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for pr in &q.code_probs {
            for row in 0..12 {
                assert!((g.value(*pr).row(row).iter().sum::<f32>() - 1.0).abs() < 1e-5);
            }
        }
        (g.value(q.q).clone(), q.codes)
    };
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    assert_eq!(ca.len(), 2);
    assert!(ca.iter().flatten().all(|v| *v < 16));

    // the quantized vector is the projection of the selected codewords
    let cb0 = p.get("quant.codebook.0").unwrap();
    let cb1 = p.get("quant.codebook.1").unwrap();
    let w = p.get("quant.proj.w").unwrap();
    let bias = p.get("quant.proj.b").unwrap();
    for row in 0..12 {
        let cat: Vec<f32> = cb0.row(ca[0][row]).iter().chain(cb1.row(ca[1][row])).copied().collect();
        for j in 0..64 {
            let want: f32 = cat.iter().enumerate().map(|(i, v)| v * w.data()[i * 64 + j]).sum::<f32>() + bias.data()[j];
            assert!((a.row(row)[j] - want).abs() < 1e-4);
        }
    }
}

#[test]
fn gumbel_rejects_non_positive_temperature() {
    let (c, p) = setup();
    let mut g = Graph::<f32>::new();
    let b = p.bind(&mut g, true);
    let x = g.constant(Tensor::zeros(vec![3, 64]));
    let r = quantize(&mut g, &c, &b, x, QuantizerMode::Gumbel { temperature: 0.0 }, &mut ChaCha8Rng::seed_from_u64(0));
    assert!(matches!(r, Err(Error::NonPositiveTemperature(_))));
}

/// With a downstream function linear in the one-hot selection, the
/// straight-through gradient equals the exact gradient of the same function
/// evaluated on the soft Gumbel distribution.
#[test]
fn straight_through_matches_soft_relaxation() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let (rows, v, tau) = (4, 6, 0.7);
    let logits = Tensor::new(vec![rows, v], (0..rows * v).map(|_| r.gen_range(-2.0..2.0)).collect()).unwrap();
    let weights = Tensor::new(vec![rows, v], (0..rows * v).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
    let noise = Tensor::new(vec![rows, v], gumbel_noise(&mut r, rows * v)).unwrap();

    let build = |hard: bool| {
        let mut g = Graph::<f64>::new();
        let l = g.input("logits", logits.clone(), true);
        let n = g.constant(noise.clone());
        let w = g.constant(weights.clone());
        let y = g.add(l, n).unwrap();
        let y = g.scale(y, 1.0 / tau).unwrap();
        let mut s = g.softmax(y).unwrap();
        if hard {
            s = g.one_hot(s, true).unwrap();
        }
        let f = g.mul(s, w).unwrap();
        let f = g.sum(f).unwrap();
        (g, l, f)
    };
    let (g, l, f) = build(true);
    let st = g.backward(f).unwrap().wrt(l);
    let (mut soft, ls, fs) = build(false);
    let eps = 1e-4;
    for i in 0..rows * v {
        let base = soft.value(ls).clone();
        let mut plus = base.clone();
        plus.data_mut()[i] += eps;
        soft.evaluate(&[("logits", plus)]).unwrap();
        let fp = soft.value(fs).item();
        let mut minus = base.clone();
        minus.data_mut()[i] -= eps;
        soft.evaluate(&[("logits", minus)]).unwrap();
        let fm = soft.value(fs).item();
        soft.evaluate(&[("logits", base)]).unwrap();
        let fd = (fp - fm) / (2.0 * eps);
        let a = st.data()[i];
        assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-8) < 1e-4, "{i}: {a} vs {fd}");
    }
    let check = grad_check(&mut soft, fs, &[ls], 1e-4).unwrap();
    assert!(check.max_relative_error < 1e-4);
}

#[test]
fn identity_views_collapse_under_argmax() {
    let (c, p) = setup();
    let x = masked(&[clip("a", 6000, 1), clip("b", 4000, 2)], vec![vec![0, 1, 2, 7], vec![3, 4, 5]]);
    let mut g = Graph::<f32>::new();
    let b = p.bind(&mut g, true);
    let out = forward_pair(&mut g, &c, &b, &x, &x, QuantizerMode::Argmax, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for u in &out.utterances {
        assert_eq!(g.value(u.c), g.value(u.c_prime));
        assert_eq!(g.value(u.q_t), g.value(u.q_t_prime));
    }
}

#[test]
fn output_shapes() {
    let (c, p) = setup();
    let masks = vec![(0..18).collect::<Vec<_>>(), (2..14).collect()];
    let x = masked(&[clip("a", 8000, 1), clip("b", 7000, 2)], masks);
    let mut g = Graph::<f32>::new();
    let b = p.bind(&mut g, true);
    let out = forward_pair(&mut g, &c, &b, &x, &x, QuantizerMode::Gumbel { temperature: 2.0 }, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    assert_eq!(out.masked_steps(), 30);
    let rows: usize = out.utterances.iter().map(|u| g.value(u.q_t).rows()).sum();
    assert_eq!(rows, 30);
    for u in &out.utterances {
        assert_eq!(g.value(u.q_t).cols(), 64);
        assert_eq!(g.value(u.c_t_prime).shape(), g.value(u.q_t_prime).shape());
        assert_eq!(g.value(u.c).rows(), 24);
    }
}

#[test]
fn permuting_batch_permutes_outputs() {
    let (c, p) = setup();
    let clips = [clip("a", 6000, 1), clip("b", 4500, 2), clip("c", 5000, 3)];
    let masks = vec![vec![1, 2, 3], vec![4, 5], vec![0, 6, 7]];
    let perm = [2, 0, 1];
    let run = |order: &[usize]| {
        let cs: Vec<_> = order.iter().map(|i| clips[*i].clone()).collect();
        let ms: Vec<_> = order.iter().map(|i| masks[*i].clone()).collect();
        let x = masked(&cs, ms);
        let mut g = Graph::<f32>::new();
        let b = p.bind(&mut g, true);
        let out = forward_pair(&mut g, &c, &b, &x, &x, QuantizerMode::Argmax, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        out.utterances.iter().map(|u| (g.value(u.c_t).clone(), g.value(u.q_t).clone())).collect::<Vec<_>>()
    };
    let base = run(&[0, 1, 2]);
    let permuted = run(&perm);
    for (slot, src) in perm.iter().enumerate() {
        // padding width differs between orders only in trailing zeros, which
        // valid frames never see through the key mask
        assert!(permuted[slot].0.max_abs_diff(&base[*src].0) < 1e-5);
        assert!(permuted[slot].1.max_abs_diff(&base[*src].1) < 1e-5);
    }
}

#[test]
fn targets_ignore_mask_embedding() {
    let (c, p) = setup();
    let x = masked(&[clip("a", 6000, 1)], vec![vec![3, 4, 5, 6]]);
    let mut g = Graph::<f32>::new();
    let b = p.bind(&mut g, true);
    let out = forward_pair(&mut g, &c, &b, &x, &x, QuantizerMode::Gumbel { temperature: 1.0 }, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    let u = &out.utterances[0];
    let s = g.sum(u.q_t).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.wrt(b.var("mask_emb")).data().iter().all(|v| *v == 0.0));
    let s = g.sum(u.c_t).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.wrt(b.var("mask_emb")).data().iter().any(|v| *v != 0.0));
}

#[test]
fn view_mismatch_is_rejected() {
    let (c, p) = setup();
    let x = masked(&[clip("a", 6000, 1)], vec![vec![1]]);
    let y = masked(&[clip("a", 7000, 1)], vec![vec![1]]);
    let mut g = Graph::<f32>::new();
    let b = p.bind(&mut g, true);
    let r = forward_pair(&mut g, &c, &b, &x, &y, QuantizerMode::Argmax, &mut ChaCha8Rng::seed_from_u64(0));
    assert!(matches!(r, Err(Error::ViewMismatch(_))));
}

#[test]
fn layout_matches_init_and_cast_round_trips() {
    let (c, p) = setup();
    p.check_layout(&c).unwrap();
    assert_eq!(p.cast::<f64>().cast::<f32>(), p);
    let mut small = c.clone();
    small.d_ff = 64;
    assert!(p.check_layout(&small).is_err());
}
