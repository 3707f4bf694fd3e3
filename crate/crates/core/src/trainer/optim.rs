use crate::autodiff::Tensor;
use crate::trainer::OptimizerConfig;

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    config: OptimizerConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(config: OptimizerConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Self {
            config,
            m: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            v: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            t: 0,
        }
    }

    /// One update of every parameter with its gradient at learning rate `lr`.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor<f32>>, grads: &[Tensor<f32>], lr: f64) {
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (i, p) in params.into_iter().enumerate() {
            let g = grads[i].data();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j] as f64;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.eps);
                let wj = *w as f64;
                *w = (wj - lr * (update + c.weight_decay * wj)) as f32;
            }
        }
    }
}
