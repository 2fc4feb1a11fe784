use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Adam optimizer state: one pair of moment accumulators per parameter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` along `grads`.
    ///
    /// Accumulators are allocated on the first call; later calls must pass
    /// parameters of the same shapes in the same order.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return shape_err(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            ));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return shape_err("parameter list changed between Adam steps");
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.first[i].len() != p.numel() {
                return shape_err(format!(
                    "parameter {i}: shape {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                ));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
