//! Central finite-difference checks of reverse-mode gradients.
//!
//! The numeric side only ever evaluates the forward pass, so it is an
//! independent reference for every backward rule.

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of [`check`]: one relative error per input.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub rel_errors: Vec<f64>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares the backward-pass gradient of a scalar function against central
/// differences with step `h`, input by input.
///
/// The relative error of an input is `‖g_ad − g_fd‖₂ / max(‖g_ad‖₂, ‖g_fd‖₂, s)`
/// where the floor `s` is `1e-6` times the largest gradient norm over all
/// inputs (at least `1e-12`). Inputs whose true gradient vanishes, such as a
/// bias feeding a batch norm, are thus compared against the overall scale
/// instead of against rounding noise. `f` is called once per perturbed
/// coordinate and must be deterministic.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.variable(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;

    let mut pairs = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = g
            .grad(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let mut numeric = vec![0.0; inputs[k].numel()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let x0 = inputs[k].data()[i];
            work[k].data_mut()[i] = x0 + h;
            let fp = eval(&work)?;
            work[k].data_mut()[i] = x0 - h;
            let fm = eval(&work)?;
            work[k].data_mut()[i] = x0;
            *slot = (fp - fm) / (2.0 * h);
        }
        pairs.push((analytic.into_data(), numeric));
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = pairs
        .iter()
        .map(|(a, n)| norm(a).max(norm(n)))
        .fold(0.0, f64::max);
    let floor = (1e-6 * scale).max(1e-12);
    let mut rel_errors = Vec::with_capacity(pairs.len());
    for (k, (a, n)) in pairs.iter().enumerate() {
        let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
        let rel = norm(&diff) / norm(a).max(norm(n)).max(floor);
        if !rel.is_finite() {
            return Err(Error::Domain(format!("non-finite gradient for input {k}")));
        }
        rel_errors.push(rel);
    }
    Ok(GradReport { rel_errors })
}
