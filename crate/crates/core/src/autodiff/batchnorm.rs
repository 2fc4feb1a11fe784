use serde::{Deserialize, Serialize};

use super::{accumulate, Graph, Op, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    Train,
    Eval,
}

/// Running statistics of a batch-normalization layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(width: usize) -> Self {
        Self {
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn width(&self) -> usize {
        self.running_mean.len()
    }
}

#[derive(Debug)]
pub(super) struct BnSaved {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Tensor,
    inv_std: Vec<f64>,
    train: bool,
}

impl Graph {
    /// Batch normalization over the rows of `x` (`n × d`) with learnable
    /// per-column scale `gamma` and shift `beta` (both length `d`).
    ///
    /// Train mode normalizes with the biased batch variance and folds the
    /// batch statistics into `state` (unbiased variance, momentum
    /// `state.momentum`). Eval mode uses the running statistics.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        mode: NormMode,
    ) -> Result<Var> {
        let vx = self.value(x);
        if vx.ndim() != 2 {
            return shape_err(format!("batchnorm input must be a matrix, got {:?}", vx.shape()));
        }
        let (n, d) = (vx.rows(), vx.cols());
        if self.value(gamma).numel() != d || self.value(beta).numel() != d || state.width() != d {
            return shape_err(format!("batchnorm parameters do not match width {d}"));
        }
        let train = mode == NormMode::Train;
        if train && n < 2 {
            return Err(Error::InvalidArgument(format!(
                "batchnorm in train mode needs at least 2 rows, got {n}"
            )));
        }

        let (mean, inv_std) = if train {
            let mut mean = vec![0.0; d];
            for row in vx.iter_rows() {
                for (m, &t) in mean.iter_mut().zip(row) {
                    *m += t;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; d];
            for row in vx.iter_rows() {
                for ((v, &t), &m) in var.iter_mut().zip(row).zip(&mean) {
                    *v += (t - m) * (t - m);
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            let mom = state.momentum;
            let unbias = n as f64 / (n as f64 - 1.0);
            for j in 0..d {
                state.running_mean[j] = (1.0 - mom) * state.running_mean[j] + mom * mean[j];
                state.running_var[j] = (1.0 - mom) * state.running_var[j] + mom * var[j] * unbias;
            }
            let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
            (mean, inv)
        } else {
            let inv = state
                .running_var
                .iter()
                .map(|v| 1.0 / (v + state.eps).sqrt())
                .collect();
            (state.running_mean.clone(), inv)
        };

        let mut xhat = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        for (i, row) in vx.iter_rows().enumerate() {
            for j in 0..d {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat[i * d + j] = h;
                out[i * d + j] = gv[j] * h + bv[j];
            }
        }
        let saved = BnSaved {
            x,
            gamma,
            beta,
            xhat: Tensor::matrix(n, d, xhat)?,
            inv_std,
            train,
        };
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(Tensor::matrix(n, d, out)?, Op::BatchNorm(saved), rg))
    }
}

pub(super) fn backward(
    graph: &Graph,
    s: &BnSaved,
    g: &Tensor,
    adj: &mut [Option<Tensor>],
) -> Result<()> {
    let (n, d) = (s.xhat.rows(), s.xhat.cols());
    let gd = g.data();
    let xh = s.xhat.data();
    let mut sum_g = vec![0.0; d];
    let mut sum_gx = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            sum_g[j] += gd[i * d + j];
            sum_gx[j] += gd[i * d + j] * xh[i * d + j];
        }
    }
    if graph.rg(s.gamma) {
        let shape = graph.value(s.gamma).shape().to_vec();
        accumulate(adj, s.gamma, Tensor::new(shape, sum_gx.clone())?);
    }
    if graph.rg(s.beta) {
        let shape = graph.value(s.beta).shape().to_vec();
        accumulate(adj, s.beta, Tensor::new(shape, sum_g.clone())?);
    }
    if graph.rg(s.x) {
        let gamma = graph.value(s.gamma).data();
        let mut dx = vec![0.0; n * d];
        if s.train {
            // dx = γ·inv/n · (n·g − Σg − x̂·Σ(g·x̂))
            let nf = n as f64;
            for i in 0..n {
                for j in 0..d {
                    let k = i * d + j;
                    dx[k] = gamma[j] * s.inv_std[j] / nf
                        * (nf * gd[k] - sum_g[j] - xh[k] * sum_gx[j]);
                }
            }
        } else {
            for i in 0..n {
                for j in 0..d {
                    dx[i * d + j] = gd[i * d + j] * gamma[j] * s.inv_std[j];
                }
            }
        }
        accumulate(adj, s.x, Tensor::matrix(n, d, dx)?);
    }
    Ok(())
}
