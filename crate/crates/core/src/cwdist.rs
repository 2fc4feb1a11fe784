//! Cramér–Wold distance estimators and the sliced Wasserstein baseline.
//!
//! The Cramér–Wold distance compares two distributions through the squared
//! L² distances of their Gaussian-smoothed one-dimensional projections,
//! averaged over all directions. For samples it has a closed-form
//! approximation with the inverse multiquadric kernel
//!
//! ```text
//! k(a, b) = (γ + ‖a − b‖² / (2D − 3))^(−1/2)
//! ```
//!
//! where `γ` is the Silverman-style bandwidth from [`silverman_gamma`].
//! Every estimator here returns `d²` already divided by `2√π`.
//!
//! Matrix sums that feed a two-sample estimate are taken as the average of a
//! row-major and a column-major pass. Together with kernels that are exact
//! transposes of each other this makes `d²(X, Y)` and `d²(Y, X)` bit-identical
//! and `d²(X, X)` exactly zero.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Smoothing bandwidth and the inputs it was computed from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bandwidth {
    pub gamma: f64,
    pub sigma_hat: f64,
    pub n: usize,
}

/// Where the bandwidth's σ̂ comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaMode {
    /// σ̂ = 1, the standard Gaussian case.
    Unit,
    /// σ̂ of the pooled coordinates of both samples, see [`pooled_sigma`].
    Pooled,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CwConfig {
    pub dim: usize,
    pub sigma_mode: SigmaMode,
    pub log_eps: f64,
}

impl CwConfig {
    pub fn new(dim: usize, sigma_mode: SigmaMode) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "Cramér–Wold estimators need dimension ≥ 2, got {dim}"
            )));
        }
        Ok(Self {
            dim,
            sigma_mode,
            log_eps: 1e-9,
        })
    }

    /// Configuration for distances to the standard Gaussian in `dim` dimensions.
    pub fn gaussian(dim: usize) -> Result<Self> {
        Self::new(dim, SigmaMode::Unit)
    }

    /// Configuration for two-sample distances with a pooled bandwidth.
    pub fn pooled(dim: usize) -> Result<Self> {
        Self::new(dim, SigmaMode::Pooled)
    }

    fn kernel_denominator(&self) -> f64 {
        (2 * self.dim - 3) as f64
    }
}

/// `γ_n = σ̂ · (4 / (3n))^(2/5)`.
pub fn silverman_gamma(n: usize, sigma_hat: f64) -> Result<Bandwidth> {
    if n == 0 {
        return Err(Error::InvalidArgument("bandwidth needs n ≥ 1".into()));
    }
    if !(sigma_hat > 0.0) || !sigma_hat.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bandwidth needs σ̂ > 0, got {sigma_hat}"
        )));
    }
    let gamma = sigma_hat * (4.0 / (3.0 * n as f64)).powf(0.4);
    Ok(Bandwidth {
        gamma,
        sigma_hat,
        n,
    })
}

/// Population standard deviation of every coordinate of every point of
/// `x ∪ y`, floored at `1e-7`. Either sample may be empty, not both.
///
/// The two samples contribute through separate partial sums, so the result
/// does not depend on which one is passed first.
pub fn pooled_sigma(x: &Tensor, y: Option<&Tensor>) -> Result<f64> {
    let parts: Vec<&[f64]> = std::iter::once(x.data())
        .chain(y.map(|t| t.data()))
        .collect();
    if let Some(y) = y {
        if x.cols() != y.cols() {
            return shape_err(format!(
                "pooled_sigma over {:?} and {:?}",
                x.shape(),
                y.shape()
            ));
        }
    }
    pooled_sigma_parts(&parts)
}

fn pooled_sigma_parts(parts: &[&[f64]]) -> Result<f64> {
    let count: usize = parts.iter().map(|p| p.len()).sum();
    if count < 2 {
        return Err(Error::InvalidArgument(
            "pooled_sigma needs at least two coordinates".into(),
        ));
    }
    let total = commutative_sum(parts.iter().map(|p| p.iter().sum::<f64>()));
    let mean = total / count as f64;
    let ss = commutative_sum(
        parts
            .iter()
            .map(|p| p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()),
    );
    Ok((ss / count as f64).sqrt().max(1e-7))
}

/// Sum of at most two partial sums; order-independent because `a + b == b + a`.
fn commutative_sum(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    match v.as_slice() {
        [a] => *a,
        [a, b] => a + b,
        _ => v.iter().sum(),
    }
}

/// Squared CW distance between the rows of `z` and `N(0, I)`, as a
/// differentiable scalar.
///
/// ```text
/// 2√π d² = 1/n² Σ_ij (γ + ‖z_i − z_j‖²/(2D−3))^(−1/2)
///        + (1 + γ)^(−1/2)
///        − 2/n Σ_i (γ + 1/2 + ‖z_i‖²/(2D−3))^(−1/2)
/// ```
/// with `γ = γ_n(σ̂ = 1)`.
pub fn cw2_to_gaussian(g: &mut Graph, z: Var, cfg: &CwConfig) -> Result<Var> {
    let (n, dim) = matrix_dims(g, z)?;
    check_dim(dim, cfg)?;
    let gamma = silverman_gamma(n, 1.0)?.gamma;
    let denom = cfg.kernel_denominator();
    let nf = n as f64;

    let self_term = kernel_mean(g, z, z, gamma, denom)?;

    // ‖z_i‖² via the squared distance to the origin
    let origin = g.constant(Tensor::zeros(&[1, dim]));
    let norms = g.pairwise_sq_dists(z, origin)?;
    let k = g.affine(norms, 1.0 / denom, gamma + 0.5);
    let k = g.sqrt(k)?;
    let k = g.reciprocal(k)?;
    let cross = g.sum(k, None)?;
    let cross = g.scale(cross, 2.0 / nf);

    let constant = (1.0 + gamma).powf(-0.5);
    let total = g.sub(self_term, cross)?;
    let total = g.add_scalar(total, constant);
    Ok(g.scale(total, 1.0 / (2.0 * PI.sqrt())))
}

/// Squared CW distance between two equally sized samples, as a
/// differentiable scalar. The bandwidth is a constant of the batch: no
/// gradient flows through σ̂.
pub fn cw2_two_samples(g: &mut Graph, x: Var, y: Var, cfg: &CwConfig) -> Result<Var> {
    let (n, dx) = matrix_dims(g, x)?;
    let (m, dy) = matrix_dims(g, y)?;
    if n != m {
        return Err(Error::InvalidArgument(format!(
            "two-sample CW distance needs equal sample sizes, got {n} and {m}"
        )));
    }
    if dx != dy {
        return shape_err(format!("sample dimensions differ: {dx} vs {dy}"));
    }
    check_dim(dx, cfg)?;
    let sigma = match cfg.sigma_mode {
        SigmaMode::Unit => 1.0,
        SigmaMode::Pooled => pooled_sigma_parts(&[g.value(x).data(), g.value(y).data()])?,
    };
    let gamma = silverman_gamma(n, sigma)?.gamma;
    let denom = cfg.kernel_denominator();

    let kxx = kernel_mean(g, x, x, gamma, denom)?;
    let kyy = kernel_mean(g, y, y, gamma, denom)?;
    let kxy = kernel_mean(g, x, y, gamma, denom)?;
    let same = g.add(kxx, kyy)?;
    let cross = g.scale(kxy, 2.0);
    let total = g.sub(same, cross)?;
    Ok(g.scale(total, 1.0 / (2.0 * PI.sqrt())))
}

/// `1/(n m) Σ_ij k(a_i, b_j)` summed symmetrically (see module docs).
fn kernel_mean(g: &mut Graph, a: Var, b: Var, gamma: f64, denom: f64) -> Result<Var> {
    let d = g.pairwise_sq_dists(a, b)?;
    let k = g.affine(d, 1.0 / denom, gamma);
    let k = g.sqrt(k)?;
    let k = g.reciprocal(k)?;
    let count = g.value(k).numel() as f64;
    let row_major = g.sum(k, None)?;
    let kt = g.transpose(k)?;
    let col_major = g.sum(kt, None)?;
    let s = g.add(row_major, col_major)?;
    Ok(g.scale(s, 0.5 / count))
}

/// `log(max(d2, log_eps))`; the gradient is zero where the clamp is active.
pub fn log_cw(g: &mut Graph, d2: Var, cfg: &CwConfig) -> Result<Var> {
    let c = g.clamp_min(d2, cfg.log_eps);
    g.log(c)
}

/// Mean over `num_dirs` random unit directions of the squared 2-Wasserstein
/// distance between the projected samples, i.e. the mean squared difference
/// of sorted projections. Differentiable with the sort order frozen.
pub fn sliced_wasserstein(g: &mut Graph, x: Var, y: Var, num_dirs: usize, seed: u64) -> Result<Var> {
    let (n, dx) = matrix_dims(g, x)?;
    let (m, dy) = matrix_dims(g, y)?;
    if n != m {
        return Err(Error::InvalidArgument(format!(
            "sliced Wasserstein needs equal sample sizes, got {n} and {m}"
        )));
    }
    if dx != dy {
        return shape_err(format!("sample dimensions differ: {dx} vs {dy}"));
    }
    if num_dirs == 0 {
        return Err(Error::InvalidArgument("num_dirs must be ≥ 1".into()));
    }
    let dirs = g.constant(random_directions(dx, num_dirs, seed).transpose()?);
    let px = g.matmul(x, dirs)?;
    let py = g.matmul(y, dirs)?;
    let sx = g.sort_columns(px)?;
    let sy = g.sort_columns(py)?;
    let diff = g.sub(sx, sy)?;
    let sq = g.square(diff)?;
    g.mean(sq, None)
}

/// `num_dirs × dim` matrix of unit rows, uniform on the sphere.
pub fn random_directions(dim: usize, num_dirs: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(dim * num_dirs);
    for _ in 0..num_dirs {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
            if norm > 1e-12 {
                data.extend(v.iter().map(|t| t / norm));
                break;
            }
        }
    }
    Tensor::matrix(num_dirs, dim, data).expect("num_dirs × dim")
}

/// Non-differentiable convenience wrapper around [`cw2_two_samples`].
pub fn cw2_two_samples_value(x: &Tensor, y: &Tensor, cfg: &CwConfig) -> Result<f64> {
    let mut g = Graph::new();
    let (vx, vy) = (g.constant(x.clone()), g.constant(y.clone()));
    let d = cw2_two_samples(&mut g, vx, vy, cfg)?;
    g.value(d).item()
}

/// Non-differentiable convenience wrapper around [`cw2_to_gaussian`].
pub fn cw2_to_gaussian_value(z: &Tensor, cfg: &CwConfig) -> Result<f64> {
    let mut g = Graph::new();
    let v = g.constant(z.clone());
    let d = cw2_to_gaussian(&mut g, v, cfg)?;
    g.value(d).item()
}

/// Non-differentiable convenience wrapper around [`sliced_wasserstein`].
pub fn sliced_wasserstein_value(x: &Tensor, y: &Tensor, num_dirs: usize, seed: u64) -> Result<f64> {
    let mut g = Graph::new();
    let (vx, vy) = (g.constant(x.clone()), g.constant(y.clone()));
    let d = sliced_wasserstein(&mut g, vx, vy, num_dirs, seed)?;
    g.value(d).item()
}

fn matrix_dims(g: &Graph, x: Var) -> Result<(usize, usize)> {
    let v = g.value(x);
    if v.ndim() != 2 {
        return shape_err(format!("expected an n × D sample, got shape {:?}", v.shape()));
    }
    Ok((v.rows(), v.cols()))
}

fn check_dim(dim: usize, cfg: &CwConfig) -> Result<()> {
    if dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "Cramér–Wold estimators need dimension ≥ 2, got {dim}"
        )));
    }
    if dim != cfg.dim {
        return shape_err(format!("sample dimension {dim} but config dimension {}", cfg.dim));
    }
    Ok(())
}
