//! Minimal reverse-mode differentiation over dense `f32`/`f64` arrays.
//!
//! Each primitive carries a hand-written backward rule. Training runs in
//! `f32`; [`grad_check`] runs in `f64`.

mod check;
mod graph;
mod real;
mod tensor;

pub use check::{grad_check, GradCheck};
pub use graph::{Gradients, Graph, Var, COSINE_EPS};
pub use real::Real;
pub use tensor::Tensor;

pub(crate) use graph::{argmax, cosine_eps};
