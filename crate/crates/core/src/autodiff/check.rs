use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_relative_error: f64,
    /// Input and flat coordinate where the maximum occurred.
    pub worst: Option<(Var, usize)>,
    /// Analytic and central-difference values at `worst`.
    pub worst_values: (f64, f64),
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of `loss` against central differences for
/// every coordinate of `inputs`. Only nodes downstream of the perturbed input
/// are recomputed; everything held constant in the graph (cluster flags,
/// negative indices, Gumbel noise) stays fixed.
pub fn grad_check(graph: &mut Graph<f64>, loss: Var, inputs: &[Var], epsilon: f64) -> Result<GradCheck> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")));
    }
    let grads = graph.backward(loss)?;
    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        coordinates: 0,
    };
    for &input in inputs {
        let analytic = grads.wrt(input);
        let mask = graph.dependents(input);
        let n = graph.value(input).numel();
        for i in 0..n {
            let orig = graph.value(input).data()[i];
            graph.leaf_data_mut(input)[i] = orig + epsilon;
            graph.replay(Some(&mask))?;
            let plus = graph.value(loss).item();
            graph.leaf_data_mut(input)[i] = orig - epsilon;
            graph.replay(Some(&mask))?;
            let minus = graph.value(loss).item();
            graph.leaf_data_mut(input)[i] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = rel;
                report.worst = Some((input, i));
                report.worst_values = (a, numeric);
            }
            report.coordinates += 1;
        }
        graph.replay(Some(&mask))?;
    }
    Ok(report)
}
