use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Real> Params<T> {
    pub fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Self {
        let index = entries.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        Self { entries, index }
    }

    pub fn entries(&self) -> &[(String, Tensor<T>)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [(String, Tensor<T>)] {
        &mut self.entries
    }

    pub fn into_entries(self) -> Vec<(String, Tensor<T>)> {
        self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|i| &self.entries[*i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params::from_entries(self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect())
    }

    /// Registers every tensor as a named graph input.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), g.input(n, t.clone(), requires_grad)))
                .collect(),
        }
    }

    /// Checks names and shapes against a freshly initialized reference.
    pub fn check_layout(&self, config: &ModelConfig) -> Result<()> {
        let reference = layout(config);
        if reference.len() != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                reference.len(),
                self.entries.len()
            )));
        }
        for ((name, shape), (n, t)) in reference.iter().zip(&self.entries) {
            if name != n || shape.as_slice() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{n}` {:?} does not match expected `{name}` {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Graph handles of bound parameters.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: Vec<(String, Var)>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| panic!("unbound parameter `{name}`"))
    }

    /// Parameter handles in parameter order.
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.vars.iter().map(|(_, v)| *v)
    }
}

#[derive(Clone, Copy)]
enum Init {
    /// `N(0, gain² / fan_in)` with `fan_in` the leading dimension.
    Normal(f64),
    Ones,
    Zeros,
    Uniform,
}

fn layout_with_init(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut v: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let norm = |v: &mut Vec<_>, name: &str, d: usize| {
        v.push((format!("{name}.g"), vec![d], Init::Ones));
        v.push((format!("{name}.b"), vec![d], Init::Zeros));
    };
    let relu_gain = 2f64.sqrt();
    let mut cin = 1;
    for (i, (&cout, &k)) in c.encoder_channels.iter().zip(&c.encoder_kernel_widths).enumerate() {
        v.push((format!("enc.{i}.w"), vec![k * cin, cout], Init::Normal(relu_gain)));
        v.push((format!("enc.{i}.b"), vec![cout], Init::Zeros));
        norm(&mut v, &format!("enc.{i}.ln"), cout);
        cin = cout;
    }
    let (dl, d) = (c.d_latent, c.d_context);
    norm(&mut v, "feat_ln", dl);
    v.push(("proj_in.w".into(), vec![dl, d], Init::Normal(1.0)));
    v.push(("proj_in.b".into(), vec![d], Init::Zeros));
    v.push(("mask_emb".into(), vec![1, d], Init::Uniform));
    v.push(("pos.w".into(), vec![c.pos_conv_kernel * d, d], Init::Normal(1.0)));
    v.push(("pos.b".into(), vec![d], Init::Zeros));
    norm(&mut v, "pos_ln", d);
    let dh = d / c.n_heads;
    for l in 0..c.n_transformer_layers {
        norm(&mut v, &format!("layer.{l}.ln1"), d);
        for h in 0..c.n_heads {
            for m in ["wq", "wk", "wv"] {
                v.push((format!("layer.{l}.head.{h}.{m}"), vec![d, dh], Init::Normal(1.0)));
            }
        }
        v.push((format!("layer.{l}.wo"), vec![d, d], Init::Normal(1.0)));
        v.push((format!("layer.{l}.bo"), vec![d], Init::Zeros));
        norm(&mut v, &format!("layer.{l}.ln2"), d);
        v.push((format!("layer.{l}.w1"), vec![d, c.d_ff], Init::Normal(relu_gain)));
        v.push((format!("layer.{l}.b1"), vec![c.d_ff], Init::Zeros));
        v.push((format!("layer.{l}.w2"), vec![c.d_ff, d], Init::Normal(1.0)));
        v.push((format!("layer.{l}.b2"), vec![d], Init::Zeros));
    }
    norm(&mut v, "final_ln", d);
    let q = &c.quantizer;
    v.push(("quant.w".into(), vec![dl, q.codebook_count()], Init::Normal(1.0)));
    v.push(("quant.b".into(), vec![q.codebook_count()], Init::Zeros));
    for g in 0..q.groups {
        v.push((format!("quant.codebook.{g}"), vec![q.entries_per_group, q.d_code], Init::Uniform));
    }
    v.push(("quant.proj.w".into(), vec![q.groups * q.d_code, d], Init::Normal(1.0)));
    v.push(("quant.proj.b".into(), vec![d], Init::Zeros));
    v
}

/// Parameter names and shapes in storage order.
pub fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    layout_with_init(config).into_iter().map(|(n, s, _)| (n, s)).collect()
}

pub fn init_params(config: &ModelConfig, rng: &mut impl Rng) -> Result<Params<f32>> {
    config.validate()?;
    let entries = layout_with_init(config)
        .into_iter()
        .map(|(name, shape, init)| {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = match init {
                Init::Ones => vec![1.0; n],
                Init::Zeros => vec![0.0; n],
                Init::Uniform => (0..n).map(|_| rng.gen::<f32>()).collect(),
                Init::Normal(gain) => {
                    let std = gain / (shape[0] as f64).sqrt();
                    (0..n).map(|_| (rng.sample::<f64, _>(StandardNormal) * std) as f32).collect()
                }
            };
            Ok((name, Tensor::new(shape, data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Params::from_entries(entries))
}
