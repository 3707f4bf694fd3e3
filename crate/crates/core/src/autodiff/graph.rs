use crate::autodiff::real::gemm;
use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Added to each vector norm before dividing in the cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[.., C] + [C]`
    AddRow(Var, Var),
    /// `[.., C] * [C]`
    MulRow(Var, Var),
    Scale(Var, T),
    MatMul {
        a: Var,
        b: Var,
        a_t: bool,
        b_t: bool,
    },
    Conv1d {
        x: Var,
        w: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    LayerNorm(Var, T),
    Gelu(Var),
    Softmax(Var),
    Log(Var),
    Exp(Var),
    XLogX(Var),
    Gather(Var, Vec<usize>),
    Concat(Vec<Var>),
    SliceCols(Var, usize, usize),
    Reshape(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Cosine(Var, Var),
    InfoNce(Var, Vec<bool>),
    OneHot(Var, bool),
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::MatMul { .. } => "matmul",
            Op::Conv1d { .. } => "conv1d",
            Op::LayerNorm(..) => "layer_norm",
            Op::Gelu(..) => "gelu",
            Op::Softmax(..) => "softmax",
            Op::Log(..) => "log",
            Op::Exp(..) => "exp",
            Op::XLogX(..) => "xlogx",
            Op::Gather(..) => "gather",
            Op::Concat(..) => "concat",
            Op::SliceCols(..) => "slice_cols",
            Op::Reshape(..) => "reshape",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::MeanRows(..) => "mean_rows",
            Op::Cosine(..) => "cosine",
            Op::InfoNce(..) => "info_nce",
            Op::OneHot(..) => "one_hot",
        }
    }

    pub(crate) fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::Cosine(a, b)
            | Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Conv1d { x, w, .. } => vec![*x, *w],
            Op::Concat(parts) => parts.clone(),
            Op::Scale(x, _)
            | Op::LayerNorm(x, _)
            | Op::Gelu(x)
            | Op::Softmax(x)
            | Op::Log(x)
            | Op::Exp(x)
            | Op::XLogX(x)
            | Op::Gather(x, _)
            | Op::SliceCols(x, ..)
            | Op::Reshape(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::MeanRows(x)
            | Op::InfoNce(x, _)
            | Op::OneHot(x, _) => vec![*x],
        }
    }

    fn differentiable(&self) -> bool {
        !matches!(self, Op::OneHot(_, false))
    }
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
    name: Option<String>,
}

/// Define-by-run computation graph. Nodes are evaluated eagerly as they are
/// appended, so insertion order is a valid topological order; the graph can
/// be replayed with new input values via [`Graph::evaluate`].
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    strict: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            strict: false,
        }
    }

    /// In strict mode any NaN/Inf produced by a node is an error.
    pub fn with_strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Named leaf.
    pub fn input(&mut self, name: &str, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
            name: Some(name.to_string()),
        });
        Var(self.nodes.len() - 1)
    }

    /// Anonymous leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: false,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn lookup(&self, name: &str) -> Option<Var> {
        self.nodes
            .iter()
            .position(|n| n.name.as_deref() == Some(name))
            .map(Var)
    }

    fn push(&mut self, op: Op<T>) -> Result<Var> {
        let node = self.nodes.len();
        let value = compute(&op, &self.nodes).map_err(|detail| Error::Shape {
            node,
            op: op.name(),
            detail,
        })?;
        if self.strict && !value.all_finite() {
            return Err(Error::NonFinite {
                node,
                op: op.name(),
            });
        }
        let requires_grad =
            op.differentiable() && op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            name: None,
        });
        Ok(Var(node))
    }

    /// Rebinds named inputs and recomputes every node in order.
    pub fn evaluate(&mut self, bindings: &[(&str, Tensor<T>)]) -> Result<()> {
        for (name, value) in bindings {
            let v = self
                .lookup(name)
                .ok_or_else(|| Error::UnknownInput(name.to_string()))?;
            self.set_value(v, value.clone())?;
        }
        self.replay(None)
    }

    /// Replaces the value of a leaf without recomputing dependents.
    pub fn set_value(&mut self, v: Var, value: Tensor<T>) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::InvalidTensor(format!("node #{} is not a leaf", v.0)));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::Shape {
                node: v.0,
                op: "leaf",
                detail: format!(
                    "bound value has shape {:?}, expected {:?}",
                    value.shape(),
                    node.value.shape()
                ),
            });
        }
        node.value = value;
        Ok(())
    }

    pub(crate) fn leaf_data_mut(&mut self, v: Var) -> &mut [T] {
        debug_assert!(matches!(self.nodes[v.0].op, Op::Leaf));
        self.nodes[v.0].value.data_mut()
    }

    /// Nodes whose value depends on `v` (including `v`).
    pub(crate) fn dependents(&self, v: Var) -> Vec<bool> {
        let mut mark = vec![false; self.nodes.len()];
        mark[v.0] = true;
        for i in v.0 + 1..self.nodes.len() {
            mark[i] = self.nodes[i].op.parents().iter().any(|p| mark[p.0]);
        }
        mark
    }

    pub(crate) fn replay(&mut self, only: Option<&[bool]>) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) || only.is_some_and(|m| !m[i]) {
                continue;
            }
            let op = &self.nodes[i].op;
            let value = compute(op, &self.nodes).map_err(|detail| Error::Shape {
                node: i,
                op: op.name(),
                detail,
            })?;
            if self.strict && !value.all_finite() {
                return Err(Error::NonFinite {
                    node: i,
                    op: op.name(),
                });
            }
            self.nodes[i].value = value;
        }
        Ok(())
    }

    // ---- primitives -------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    /// Adds a `[C]` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.push(Op::AddRow(x, bias))
    }

    /// Multiplies every row of `x` elementwise by a `[C]` vector.
    pub fn mul_row(&mut self, x: Var, gain: Var) -> Result<Var> {
        self.push(Op::MulRow(x, gain))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        self.push(Op::Scale(x, s))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul {
            a,
            b,
            a_t: false,
            b_t: false,
        })
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul {
            a,
            b,
            a_t: false,
            b_t: true,
        })
    }

    /// Strided 1-D convolution over time. `x` is `[L, C_in]`, `w` is
    /// `[kernel·C_in, C_out]` with row index `k·C_in + c`; zero padding of
    /// `pad` frames on both sides.
    pub fn conv1d(&mut self, x: Var, w: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        self.push(Op::Conv1d {
            x,
            w,
            kernel,
            stride,
            pad,
        })
    }

    /// Normalizes each row to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        self.push(Op::LayerNorm(x, T::lit(eps)))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Gelu(x))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Softmax(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Exp(x))
    }

    /// `x·ln x`, continuous at 0.
    pub fn xlogx(&mut self, x: Var) -> Result<Var> {
        self.push(Op::XLogX(x))
    }

    /// Selects rows along the leading axis.
    pub fn gather(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        self.push(Op::Gather(x, rows))
    }

    /// Concatenates 2-D tensors along columns.
    pub fn concat(&mut self, parts: Vec<Var>) -> Result<Var> {
        self.push(Op::Concat(parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.push(Op::SliceCols(x, start, end))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        self.push(Op::Reshape(x, shape))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Mean(x))
    }

    /// Column means: `[R, C] -> [C]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        self.push(Op::MeanRows(x))
    }

    /// Row-wise cosine similarity of two `[R, D]` tensors, giving `[R]`.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Cosine(a, b))
    }

    /// Row-wise `logsumexp(valid logits) - logits[r, 0]` for `[R, K]` logits,
    /// i.e. cross-entropy with the target in column 0. Entries with
    /// `valid[r*K + j] == false` are excluded from the softmax; column 0 must
    /// be valid.
    pub fn info_nce(&mut self, logits: Var, valid: Vec<bool>) -> Result<Var> {
        self.push(Op::InfoNce(logits, valid))
    }

    /// One-hot of the row-wise argmax over the last axis. With
    /// `straight_through` the backward pass copies the incoming gradient to
    /// `x`; otherwise no gradient flows.
    pub fn one_hot(&mut self, x: Var, straight_through: bool) -> Result<Var> {
        self.push(Op::OneHot(x, straight_through))
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse-mode gradients of a scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::filled(lv.shape().to_vec(), T::one()));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: &Var| &self.nodes[v.0].value;
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, t: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing
                    .data_mut()
                    .iter_mut()
                    .zip(t.data())
                    .for_each(|(e, d)| *e += *d),
                slot @ None => *slot = Some(t),
            }
        };
        let shaped = |like: &Tensor<T>, data: Vec<T>| {
            Tensor::new(like.shape().to_vec(), data).expect("gradient shape")
        };
        let out = &self.nodes[i].value;
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                if wants(b) {
                    acc(*b, shaped(g, gd.iter().map(|v| -*v).collect()));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                if wants(a) {
                    acc(*a, shaped(av, zip_map(gd, bv.data(), |g, y| g * y)));
                }
                if wants(b) {
                    acc(*b, shaped(bv, zip_map(gd, av.data(), |g, x| g * x)));
                }
            }
            Op::AddRow(x, b) => {
                acc(*x, g.clone());
                if wants(b) {
                    let c = val(b).numel();
                    let mut db = vec![T::zero(); c];
                    for row in gd.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(d, g)| *d += *g);
                    }
                    acc(*b, shaped(val(b), db));
                }
            }
            Op::MulRow(x, b) => {
                let (xv, bv) = (val(x), val(b));
                let c = bv.numel();
                if wants(x) {
                    let dx = gd
                        .chunks(c)
                        .flat_map(|row| row.iter().zip(bv.data()).map(|(g, s)| *g * *s))
                        .collect();
                    acc(*x, shaped(xv, dx));
                }
                if wants(b) {
                    let mut db = vec![T::zero(); c];
                    for (grow, xrow) in gd.chunks(c).zip(xv.data().chunks(c)) {
                        for j in 0..c {
                            db[j] += grow[j] * xrow[j];
                        }
                    }
                    acc(*b, shaped(bv, db));
                }
            }
            Op::Scale(x, s) => acc(*x, shaped(g, gd.iter().map(|v| *v * *s).collect())),
            Op::MatMul { a, b, a_t, b_t } => {
                let (av, bv) = (val(a), val(b));
                let (m, k) = mat_dims(av, *a_t);
                let n = out.cols();
                if wants(a) {
                    let mut da = vec![T::zero(); m * k];
                    if *a_t {
                        gemm(k, n, m, bv.data(), *b_t, gd, true, &mut da, false);
                    } else {
                        gemm(m, n, k, gd, false, bv.data(), !*b_t, &mut da, false);
                    }
                    acc(*a, shaped(av, da));
                }
                if wants(b) {
                    let mut db = vec![T::zero(); k * n];
                    if *b_t {
                        gemm(n, m, k, gd, true, av.data(), *a_t, &mut db, false);
                    } else {
                        gemm(k, m, n, av.data(), !*a_t, gd, false, &mut db, false);
                    }
                    acc(*b, shaped(bv, db));
                }
            }
            Op::Conv1d {
                x,
                w,
                kernel,
                stride,
                pad,
            } => {
                let (xv, wv) = (val(x), val(w));
                let (len, c_in) = (xv.rows(), xv.cols());
                let c_out = wv.cols();
                let width = kernel * c_in;
                let l_out = out.rows();
                if wants(w) {
                    let cols = im2col(xv.data(), len, c_in, *kernel, *stride, *pad, l_out);
                    let mut dw = vec![T::zero(); width * c_out];
                    gemm(width, l_out, c_out, &cols, true, gd, false, &mut dw, false);
                    acc(*w, shaped(wv, dw));
                }
                if wants(x) {
                    let mut dcols = vec![T::zero(); l_out * width];
                    gemm(l_out, c_out, width, gd, false, wv.data(), true, &mut dcols, false);
                    let mut dx = vec![T::zero(); len * c_in];
                    for t in 0..l_out {
                        for k in 0..*kernel {
                            let p = (t * stride + k) as isize - *pad as isize;
                            if p < 0 || p as usize >= len {
                                continue;
                            }
                            let src = &dcols[t * width + k * c_in..t * width + (k + 1) * c_in];
                            let dst = &mut dx[p as usize * c_in..(p as usize + 1) * c_in];
                            dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s);
                        }
                    }
                    acc(*x, shaped(xv, dx));
                }
            }
            Op::LayerNorm(x, eps) => {
                let xv = val(x);
                let c = xv.cols();
                let cf = T::from_usize(c).unwrap();
                let mut dx = Vec::with_capacity(xv.numel());
                for (xrow, grow) in xv.data().chunks(c).zip(gd.chunks(c)) {
                    let (mean, rstd) = row_stats(xrow, *eps);
                    let xhat: Vec<T> = xrow.iter().map(|v| (*v - mean) * rstd).collect();
                    let gm = grow.iter().copied().sum::<T>() / cf;
                    let gx = grow.iter().zip(&xhat).map(|(g, h)| *g * *h).sum::<T>() / cf;
                    dx.extend(
                        grow.iter()
                            .zip(&xhat)
                            .map(|(g, h)| rstd * (*g - gm - *h * gx)),
                    );
                }
                acc(*x, shaped(xv, dx));
            }
            Op::Gelu(x) => {
                let xv = val(x);
                acc(*x, shaped(xv, zip_map(gd, xv.data(), |g, x| g * gelu_grad(x))));
            }
            Op::Softmax(x) => {
                let c = last_dim(out);
                let mut dx = Vec::with_capacity(out.numel());
                for (yrow, grow) in out.data().chunks(c).zip(gd.chunks(c)) {
                    let dot = yrow.iter().zip(grow).map(|(y, g)| *y * *g).sum::<T>();
                    dx.extend(yrow.iter().zip(grow).map(|(y, g)| *y * (*g - dot)));
                }
                acc(*x, shaped(val(x), dx));
            }
            Op::Log(x) => {
                let xv = val(x);
                acc(*x, shaped(xv, zip_map(gd, xv.data(), |g, x| g / x)));
            }
            Op::Exp(x) => acc(*x, shaped(val(x), zip_map(gd, out.data(), |g, y| g * y))),
            Op::XLogX(x) => {
                let xv = val(x);
                acc(
                    *x,
                    shaped(
                        xv,
                        zip_map(gd, xv.data(), |g, x| {
                            if x > T::zero() {
                                g * (x.ln() + T::one())
                            } else {
                                T::zero()
                            }
                        }),
                    ),
                );
            }
            Op::Gather(x, rows) => {
                let xv = val(x);
                let c = xv.cols();
                let mut dx = vec![T::zero(); xv.numel()];
                for (r, grow) in rows.iter().zip(gd.chunks(c)) {
                    dx[r * c..(r + 1) * c]
                        .iter_mut()
                        .zip(grow)
                        .for_each(|(d, g)| *d += *g);
                }
                acc(*x, shaped(xv, dx));
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let pv = val(p);
                    let c = pv.cols();
                    if wants(p) {
                        let d = gd
                            .chunks(total)
                            .flat_map(|row| row[offset..offset + c].iter().copied())
                            .collect();
                        acc(*p, shaped(pv, d));
                    }
                    offset += c;
                }
            }
            Op::SliceCols(x, start, end) => {
                let xv = val(x);
                let c = xv.cols();
                let w = end - start;
                let mut dx = vec![T::zero(); xv.numel()];
                for (r, grow) in gd.chunks(w).enumerate() {
                    dx[r * c + start..r * c + end].copy_from_slice(grow);
                }
                acc(*x, shaped(xv, dx));
            }
            Op::Reshape(x, _) => acc(*x, shaped(val(x), gd.to_vec())),
            Op::Sum(x) => acc(*x, Tensor::filled(val(x).shape().to_vec(), g.item())),
            Op::Mean(x) => {
                let xv = val(x);
                let n = T::from_usize(xv.numel()).unwrap();
                acc(*x, Tensor::filled(xv.shape().to_vec(), g.item() / n));
            }
            Op::MeanRows(x) => {
                let xv = val(x);
                let r = T::from_usize(xv.rows()).unwrap();
                let dx = (0..xv.rows()).flat_map(|_| gd.iter().map(|v| *v / r)).collect();
                acc(*x, shaped(xv, dx));
            }
            Op::Cosine(a, b) => {
                let (av, bv) = (val(a), val(b));
                let d = av.cols();
                let eps = T::lit(COSINE_EPS);
                let mut da = Vec::with_capacity(av.numel());
                let mut db = Vec::with_capacity(bv.numel());
                for ((ar, br), g) in av.data().chunks(d).zip(bv.data().chunks(d)).zip(gd) {
                    let dot = ar.iter().zip(br).map(|(x, y)| *x * *y).sum::<T>();
                    let na = ar.iter().map(|x| *x * *x).sum::<T>().sqrt();
                    let nb = br.iter().map(|x| *x * *x).sum::<T>().sqrt();
                    let (ea, eb) = (na + eps, nb + eps);
                    let denom = ea * eb;
                    // d/da [dot / ((|a|+e)(|b|+e))]
                    let ka = if na > T::zero() { dot / (ea * denom * na) } else { T::zero() };
                    let kb = if nb > T::zero() { dot / (eb * denom * nb) } else { T::zero() };
                    da.extend(ar.iter().zip(br).map(|(x, y)| *g * (*y / denom - ka * *x)));
                    db.extend(ar.iter().zip(br).map(|(x, y)| *g * (*x / denom - kb * *y)));
                }
                if wants(a) {
                    acc(*a, shaped(av, da));
                }
                if wants(b) {
                    acc(*b, shaped(bv, db));
                }
            }
            Op::InfoNce(x, valid) => {
                let xv = val(x);
                let k = xv.cols();
                let mut dx = vec![T::zero(); xv.numel()];
                for (r, g) in gd.iter().enumerate() {
                    let row = &xv.data()[r * k..(r + 1) * k];
                    let ok = &valid[r * k..(r + 1) * k];
                    let m = masked_max(row, ok);
                    let z: T = row
                        .iter()
                        .zip(ok)
                        .filter(|(_, v)| **v)
                        .map(|(l, _)| (*l - m).exp())
                        .sum();
                    for j in 0..k {
                        if ok[j] {
                            let p = (row[j] - m).exp() / z;
                            let target = if j == 0 { T::one() } else { T::zero() };
                            dx[r * k + j] = *g * (p - target);
                        }
                    }
                }
                acc(*x, shaped(xv, dx));
            }
            Op::OneHot(x, _) => acc(*x, g.clone()),
        }
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`; zeros when `v` is detached from the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }

    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

// ---- forward kernels --------------------------------------------------------

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn mat_dims<T: Real>(t: &Tensor<T>, transposed: bool) -> (usize, usize) {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    if transposed {
        (c, r)
    } else {
        (r, c)
    }
}

fn row_stats<T: Real>(row: &[T], eps: T) -> (T, T) {
    let n = T::from_usize(row.len()).unwrap();
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

pub(crate) fn gelu<T: Real>(x: T) -> T {
    let u = T::lit(GELU_K) * (x + T::lit(GELU_C) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let u = T::lit(GELU_K) * (x + T::lit(GELU_C) * x * x * x);
    let t = u.tanh();
    let du = T::lit(GELU_K) * (T::one() + T::lit(3.0 * GELU_C) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * du
}

fn masked_max<T: Real>(row: &[T], ok: &[bool]) -> T {
    row.iter()
        .zip(ok)
        .filter(|(_, v)| **v)
        .map(|(l, _)| *l)
        .fold(T::neg_infinity(), T::max)
}

fn im2col<T: Real>(
    x: &[T],
    len: usize,
    c_in: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    l_out: usize,
) -> Vec<T> {
    let width = kernel * c_in;
    let mut cols = vec![T::zero(); l_out * width];
    for t in 0..l_out {
        for k in 0..kernel {
            let p = (t * stride + k) as isize - pad as isize;
            if p < 0 || p as usize >= len {
                continue;
            }
            let p = p as usize;
            cols[t * width + k * c_in..t * width + (k + 1) * c_in]
                .copy_from_slice(&x[p * c_in..(p + 1) * c_in]);
        }
    }
    cols
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(), String> {
    if a.shape() != b.shape() {
        return Err(format!("operands {:?} and {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn two_d<T: Real>(t: &Tensor<T>, what: &str) -> Result<(usize, usize), String> {
    if t.shape().len() != 2 {
        return Err(format!("{what} must be 2-D, got {:?}", t.shape()));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn last_dim<T: Real>(t: &Tensor<T>) -> usize {
    t.shape().last().copied().unwrap_or(1)
}

fn compute<T: Real>(op: &Op<T>, nodes: &[Node<T>]) -> Result<Tensor<T>, String> {
    let val = |v: &Var| &nodes[v.0].value;
    let like = |t: &Tensor<T>, data: Vec<T>| Tensor::new(t.shape().to_vec(), data).unwrap();
    Ok(match op {
        Op::Leaf => unreachable!("leaves are never recomputed"),
        Op::Add(a, b) => {
            same_shape(val(a), val(b))?;
            like(val(a), zip_map(val(a).data(), val(b).data(), |x, y| x + y))
        }
        Op::Sub(a, b) => {
            same_shape(val(a), val(b))?;
            like(val(a), zip_map(val(a).data(), val(b).data(), |x, y| x - y))
        }
        Op::Mul(a, b) => {
            same_shape(val(a), val(b))?;
            like(val(a), zip_map(val(a).data(), val(b).data(), |x, y| x * y))
        }
        Op::AddRow(x, b) | Op::MulRow(x, b) => {
            let (xv, bv) = (val(x), val(b));
            let c = last_dim(xv);
            if bv.numel() != c {
                return Err(format!("row operand {:?} against {:?}", bv.shape(), xv.shape()));
            }
            let add = matches!(op, Op::AddRow(..));
            let data = xv
                .data()
                .chunks(c)
                .flat_map(|row| {
                    row.iter()
                        .zip(bv.data())
                        .map(move |(v, s)| if add { *v + *s } else { *v * *s })
                })
                .collect();
            like(xv, data)
        }
        Op::Scale(x, s) => like(val(x), val(x).data().iter().map(|v| *v * *s).collect()),
        Op::MatMul { a, b, a_t, b_t } => {
            let (av, bv) = (val(a), val(b));
            two_d(av, "lhs")?;
            two_d(bv, "rhs")?;
            let (m, k) = mat_dims(av, *a_t);
            let (k2, n) = mat_dims(bv, *b_t);
            if k != k2 {
                return Err(format!(
                    "inner dimensions {k} vs {k2} ({:?} x {:?})",
                    av.shape(),
                    bv.shape()
                ));
            }
            let mut c = vec![T::zero(); m * n];
            gemm(m, k, n, av.data(), *a_t, bv.data(), *b_t, &mut c, false);
            Tensor::new(vec![m, n], c).unwrap()
        }
        Op::Conv1d {
            x,
            w,
            kernel,
            stride,
            pad,
        } => {
            let (xv, wv) = (val(x), val(w));
            let (len, c_in) = two_d(xv, "conv input")?;
            let (width, c_out) = two_d(wv, "conv weight")?;
            if *kernel == 0 || *stride == 0 || width != kernel * c_in {
                return Err(format!(
                    "weight {:?} incompatible with kernel {kernel}, stride {stride}, {c_in} input channels",
                    wv.shape()
                ));
            }
            let padded = len + 2 * pad;
            if padded < *kernel {
                return Err(format!("input length {len} shorter than kernel {kernel}"));
            }
            let l_out = (padded - kernel) / stride + 1;
            let cols = im2col(xv.data(), len, c_in, *kernel, *stride, *pad, l_out);
            let mut y = vec![T::zero(); l_out * c_out];
            gemm(l_out, width, c_out, &cols, false, wv.data(), false, &mut y, false);
            Tensor::new(vec![l_out, c_out], y).unwrap()
        }
        Op::LayerNorm(x, eps) => {
            let xv = val(x);
            let c = last_dim(xv);
            let data = xv
                .data()
                .chunks(c)
                .flat_map(|row| {
                    let (mean, rstd) = row_stats(row, *eps);
                    row.iter().map(move |v| (*v - mean) * rstd)
                })
                .collect();
            like(xv, data)
        }
        Op::Gelu(x) => like(val(x), val(x).data().iter().map(|v| gelu(*v)).collect()),
        Op::Softmax(x) => {
            let xv = val(x);
            let c = last_dim(xv);
            let mut data = Vec::with_capacity(xv.numel());
            for row in xv.data().chunks(c) {
                let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                let e: Vec<T> = row.iter().map(|v| (*v - m).exp()).collect();
                let z: T = e.iter().copied().sum();
                data.extend(e.into_iter().map(|v| v / z));
            }
            like(xv, data)
        }
        Op::Log(x) => like(val(x), val(x).data().iter().map(|v| v.ln()).collect()),
        Op::Exp(x) => like(val(x), val(x).data().iter().map(|v| v.exp()).collect()),
        Op::XLogX(x) => like(
            val(x),
            val(x)
                .data()
                .iter()
                .map(|v| if *v > T::zero() { *v * v.ln() } else { T::zero() })
                .collect(),
        ),
        Op::Gather(x, rows) => {
            let xv = val(x);
            if xv.shape().is_empty() {
                return Err("cannot gather from a scalar".into());
            }
            let (r, c) = (xv.rows(), xv.cols());
            let mut data = Vec::with_capacity(rows.len() * c);
            for &i in rows {
                if i >= r {
                    return Err(format!("row index {i} out of range for {r} rows"));
                }
                data.extend_from_slice(xv.row(i));
            }
            let mut shape = xv.shape().to_vec();
            shape[0] = rows.len();
            Tensor::new(shape, data).unwrap()
        }
        Op::Concat(parts) => {
            if parts.is_empty() {
                return Err("nothing to concatenate".into());
            }
            let r = two_d(val(&parts[0]), "concat part")?.0;
            let mut widths = Vec::with_capacity(parts.len());
            for p in parts {
                let (pr, pc) = two_d(val(p), "concat part")?;
                if pr != r {
                    return Err(format!("row counts {r} vs {pr}"));
                }
                widths.push(pc);
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(r * total);
            for row in 0..r {
                for (p, w) in parts.iter().zip(&widths) {
                    data.extend_from_slice(&val(p).data()[row * w..(row + 1) * w]);
                }
            }
            Tensor::new(vec![r, total], data).unwrap()
        }
        Op::SliceCols(x, start, end) => {
            let (r, c) = two_d(val(x), "slice input")?;
            if start >= end || *end > c {
                return Err(format!("column range {start}..{end} of {c}"));
            }
            let data = val(x)
                .data()
                .chunks(c)
                .flat_map(|row| row[*start..*end].iter().copied())
                .collect();
            Tensor::new(vec![r, end - start], data).unwrap()
        }
        Op::Reshape(x, shape) => val(x)
            .clone()
            .reshaped(shape.clone())
            .map_err(|e| e.to_string())?,
        Op::Sum(x) => Tensor::scalar(val(x).data().iter().copied().sum()),
        Op::Mean(x) => {
            let xv = val(x);
            if xv.numel() == 0 {
                return Err("mean of empty tensor".into());
            }
            Tensor::scalar(xv.data().iter().copied().sum::<T>() / T::from_usize(xv.numel()).unwrap())
        }
        Op::MeanRows(x) => {
            let (r, c) = two_d(val(x), "mean_rows input")?;
            if r == 0 {
                return Err("mean over zero rows".into());
            }
            let mut acc = vec![T::zero(); c];
            for row in val(x).data().chunks(c) {
                acc.iter_mut().zip(row).for_each(|(a, v)| *a += *v);
            }
            let rf = T::from_usize(r).unwrap();
            Tensor::vector(acc.into_iter().map(|v| v / rf).collect())
        }
        Op::Cosine(a, b) => {
            same_shape(val(a), val(b))?;
            let (_, d) = two_d(val(a), "cosine operand")?;
            let eps = T::lit(COSINE_EPS);
            let data = val(a)
                .data()
                .chunks(d)
                .zip(val(b).data().chunks(d))
                .map(|(x, y)| cosine_eps(x, y, eps))
                .collect();
            Tensor::vector(data)
        }
        Op::InfoNce(x, valid) => {
            let (r, k) = two_d(val(x), "logits")?;
            if valid.len() != r * k {
                return Err(format!("validity mask has {} entries for {r}x{k} logits", valid.len()));
            }
            let mut data = Vec::with_capacity(r);
            for (row, ok) in val(x).data().chunks(k).zip(valid.chunks(k)) {
                if !ok[0] {
                    return Err("target column must be valid".into());
                }
                let m = masked_max(row, ok);
                let z: T = row
                    .iter()
                    .zip(ok)
                    .filter(|(_, v)| **v)
                    .map(|(l, _)| (*l - m).exp())
                    .sum();
                data.push(m + z.ln() - row[0]);
            }
            Tensor::vector(data)
        }
        Op::OneHot(x, _) => {
            let xv = val(x);
            let c = last_dim(xv);
            let mut data = vec![T::zero(); xv.numel()];
            for (r, row) in xv.data().chunks(c).enumerate() {
                data[r * c + argmax(row)] = T::one();
            }
            like(xv, data)
        }
    })
}

/// First index of the maximum.
pub(crate) fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn cosine_eps<T: Real>(x: &[T], y: &[T], eps: T) -> T {
    let dot = x.iter().zip(y).map(|(a, b)| *a * *b).sum::<T>();
    let na = x.iter().map(|a| *a * *a).sum::<T>().sqrt();
    let nb = y.iter().map(|b| *b * *b).sum::<T>().sqrt();
    dot / ((na + eps) * (nb + eps))
}
