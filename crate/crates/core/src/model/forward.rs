use rand::Rng;

use crate::audio_io::MaskedBatch;
use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{Bound, ModelConfig};

const LN_EPS: f64 = 1e-5;
/// Added to attention scores of padded keys.
const KEY_PAD: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QuantizerMode {
    /// Gumbel-softmax with hard one-hot forward and straight-through
    /// backward.
    Gumbel { temperature: f64 },
    /// Deterministic argmax; no gradient reaches the quantizer logits.
    Argmax,
}

/// Quantizer output for a set of frames.
#[derive(Clone, Debug)]
pub struct Quantized {
    /// `[M, d_context]`
    pub q: Var,
    /// Pre-noise softmax per group, each `[M, V]`.
    pub code_probs: Vec<Var>,
    /// Selected entry per group and frame.
    pub codes: Vec<Vec<usize>>,
}

/// Graph handles for one utterance of a paired forward pass.
#[derive(Clone, Debug)]
pub struct UtteranceOutputs {
    /// Latent frames of the original view, `[NF, d_latent]`.
    pub z: Var,
    /// Context frames, `[NF, d_context]`.
    pub c: Var,
    pub c_prime: Var,
    /// Context frames at the masked steps, `[M, d_context]`.
    pub c_t: Var,
    pub c_t_prime: Var,
    /// Quantized targets at the masked steps, `[M, d_context]`.
    pub q_t: Var,
    pub q_t_prime: Var,
    pub quantized: Quantized,
    pub quantized_prime: Quantized,
    pub mask: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct EncoderOutputs {
    pub utterances: Vec<UtteranceOutputs>,
}

impl EncoderOutputs {
    pub fn masked_steps(&self) -> usize {
        self.utterances.iter().map(|u| u.mask.len()).sum()
    }
}

fn affine_norm<T: Real>(g: &mut Graph<T>, p: &Bound, x: Var, name: &str) -> Result<Var> {
    let n = g.layer_norm(x, LN_EPS)?;
    let n = g.mul_row(n, p.var(&format!("{name}.g")))?;
    g.add_row(n, p.var(&format!("{name}.b")))
}

fn linear<T: Real>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// Convolutional feature encoder followed by layer normalization: one
/// waveform of `len` samples to `[NF, d_latent]`.
pub fn feature_encoder<T: Real>(g: &mut Graph<T>, config: &ModelConfig, p: &Bound, waveform: &[f32]) -> Result<Var> {
    let geometry = config.geometry();
    if geometry.frames(waveform.len()).is_none() {
        return Err(Error::TooShort {
            samples: waveform.len(),
            receptive_field: geometry.receptive_field(),
        });
    }
    let x = Tensor::new(vec![waveform.len(), 1], waveform.iter().map(|v| T::lit(*v as f64)).collect())?;
    let mut h = g.constant(x);
    for (i, (&k, &s)) in config.encoder_kernel_widths.iter().zip(&config.encoder_strides).enumerate() {
        h = g.conv1d(h, p.var(&format!("enc.{i}.w")), k, s, 0)?;
        h = g.add_row(h, p.var(&format!("enc.{i}.b")))?;
        h = affine_norm(g, p, h, &format!("enc.{i}.ln"))?;
        h = g.gelu(h)?;
    }
    affine_norm(g, p, h, "feat_ln")
}

/// Gumbel(0, 1) noise.
pub fn gumbel_noise(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect()
}

/// Product quantization of `latents` (`[M, d_latent]`).
pub fn quantize<T: Real>(
    g: &mut Graph<T>,
    config: &ModelConfig,
    p: &Bound,
    latents: Var,
    mode: QuantizerMode,
    rng: &mut impl Rng,
) -> Result<Quantized> {
    let qc = &config.quantizer;
    let v = qc.entries_per_group;
    let logits = linear(g, latents, p.var("quant.w"), p.var("quant.b"))?;
    let rows = g.value(logits).rows();
    let mut codewords = Vec::with_capacity(qc.groups);
    let mut code_probs = Vec::with_capacity(qc.groups);
    let mut codes = Vec::with_capacity(qc.groups);
    for grp in 0..qc.groups {
        let lg = g.slice_cols(logits, grp * v, (grp + 1) * v)?;
        code_probs.push(g.softmax(lg)?);
        let hard = match mode {
            QuantizerMode::Gumbel { temperature } => {
                if !(temperature > 0.0) {
                    return Err(Error::NonPositiveTemperature(temperature));
                }
                let noise = Tensor::new(
                    vec![rows, v],
                    gumbel_noise(rng, rows * v).into_iter().map(T::lit).collect(),
                )?;
                let noise = g.constant(noise);
                let noisy = g.add(lg, noise)?;
                let noisy = g.scale(noisy, T::lit(1.0 / temperature))?;
                let soft = g.softmax(noisy)?;
                g.one_hot(soft, true)?
            }
            QuantizerMode::Argmax => g.one_hot(lg, false)?,
        };
        let value = g.value(hard);
        codes.push((0..rows).map(|r| crate::autodiff::argmax(value.row(r))).collect());
        codewords.push(g.matmul(hard, p.var(&format!("quant.codebook.{grp}")))?);
    }
    let cat = if codewords.len() == 1 { codewords[0] } else { g.concat(codewords)? };
    let q = linear(g, cat, p.var("quant.proj.w"), p.var("quant.proj.b"))?;
    Ok(Quantized { q, code_probs, codes })
}

/// Projects latents, substitutes the mask embedding at `mask`, and runs the
/// positional convolution and transformer. `valid` frames attend only to
/// the first `valid` keys.
pub fn context_network<T: Real>(
    g: &mut Graph<T>,
    config: &ModelConfig,
    p: &Bound,
    z: Var,
    mask: &[usize],
    valid: usize,
) -> Result<Var> {
    let d = config.d_context;
    let nf = g.value(z).rows();
    let y = linear(g, z, p.var("proj_in.w"), p.var("proj_in.b"))?;
    let mut keep = vec![T::one(); nf * d];
    let mut indicator = vec![T::zero(); nf];
    for &f in mask {
        keep[f * d..(f + 1) * d].iter_mut().for_each(|v| *v = T::zero());
        indicator[f] = T::one();
    }
    let keep = g.constant(Tensor::new(vec![nf, d], keep)?);
    let indicator = g.constant(Tensor::new(vec![nf, 1], indicator)?);
    let y = g.mul(y, keep)?;
    let filled = g.matmul(indicator, p.var("mask_emb"))?;
    let y = g.add(y, filled)?;

    let k = config.pos_conv_kernel;
    let pos = g.conv1d(y, p.var("pos.w"), k, 1, k / 2)?;
    let pos = g.add_row(pos, p.var("pos.b"))?;
    let pos = g.gelu(pos)?;
    let x = g.add(y, pos)?;
    let mut h = affine_norm(g, p, x, "pos_ln")?;

    let heads = config.n_heads;
    let dh = d / heads;
    let key_pad = (valid < nf).then(|| {
        let bias: Vec<T> = (0..nf * nf)
            .map(|i| if i % nf >= valid { T::lit(KEY_PAD) } else { T::zero() })
            .collect();
        Tensor::new(vec![nf, nf], bias)
    });
    let key_pad = match key_pad {
        Some(t) => Some(g.constant(t?)),
        None => None,
    };
    let inv_sqrt = T::lit(1.0 / (dh as f64).sqrt());
    for l in 0..config.n_transformer_layers {
        let a = affine_norm(g, p, h, &format!("layer.{l}.ln1"))?;
        let mut outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let pre = format!("layer.{l}.head.{hd}");
            let q = g.matmul(a, p.var(&format!("{pre}.wq")))?;
            let kk = g.matmul(a, p.var(&format!("{pre}.wk")))?;
            let vv = g.matmul(a, p.var(&format!("{pre}.wv")))?;
            let s = g.matmul_nt(q, kk)?;
            let mut s = g.scale(s, inv_sqrt)?;
            if let Some(kp) = key_pad {
                s = g.add(s, kp)?;
            }
            let att = g.softmax(s)?;
            outs.push(g.matmul(att, vv)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat(outs)? };
        let o = linear(g, cat, p.var(&format!("layer.{l}.wo")), p.var(&format!("layer.{l}.bo")))?;
        h = g.add(h, o)?;
        let f = affine_norm(g, p, h, &format!("layer.{l}.ln2"))?;
        let f = linear(g, f, p.var(&format!("layer.{l}.w1")), p.var(&format!("layer.{l}.b1")))?;
        let f = g.gelu(f)?;
        let f = linear(g, f, p.var(&format!("layer.{l}.w2")), p.var(&format!("layer.{l}.b2")))?;
        h = g.add(h, f)?;
    }
    affine_norm(g, p, h, "final_ln")
}

/// Runs both views through the model with the masks stored in `x`. Gumbel
/// noise is drawn independently for each view, original first.
pub fn forward_pair<T: Real>(
    g: &mut Graph<T>,
    config: &ModelConfig,
    p: &Bound,
    x: &MaskedBatch,
    x_aug: &MaskedBatch,
    mode: QuantizerMode,
    rng: &mut impl Rng,
) -> Result<EncoderOutputs> {
    if x.len() != x_aug.len() || x.num_frames != x_aug.num_frames || x.frame_counts != x_aug.frame_counts {
        return Err(Error::ViewMismatch(format!(
            "original has {} utterances with frames {:?}, augmented {} with {:?}",
            x.len(),
            x.frame_counts,
            x_aug.len(),
            x_aug.frame_counts
        )));
    }
    if x.mask_indices.len() != x.len() {
        return Err(Error::InvalidConfig("batch has no masks".into()));
    }
    let mut utterances = Vec::with_capacity(x.len());
    for u in 0..x.len() {
        let mask = x.mask_indices[u].clone();
        if mask.is_empty() || mask.iter().any(|f| *f >= x.frame_counts[u]) {
            return Err(Error::InvalidConfig(format!("invalid mask for utterance {u}")));
        }
        let valid = x.frame_counts[u];
        let z = feature_encoder(g, config, p, x.waveform(u))?;
        let z_prime = feature_encoder(g, config, p, x_aug.waveform(u))?;
        let c = context_network(g, config, p, z, &mask, valid)?;
        let c_prime = context_network(g, config, p, z_prime, &mask, valid)?;
        let c_t = g.gather(c, mask.clone())?;
        let c_t_prime = g.gather(c_prime, mask.clone())?;
        let zm = g.gather(z, mask.clone())?;
        let zm_prime = g.gather(z_prime, mask.clone())?;
        let quantized = quantize(g, config, p, zm, mode, rng)?;
        let quantized_prime = quantize(g, config, p, zm_prime, mode, rng)?;
        utterances.push(UtteranceOutputs {
            z,
            c,
            c_prime,
            c_t,
            c_t_prime,
            q_t: quantized.q,
            q_t_prime: quantized_prime.q,
            quantized,
            quantized_prime,
            mask,
        });
    }
    Ok(EncoderOutputs { utterances })
}
