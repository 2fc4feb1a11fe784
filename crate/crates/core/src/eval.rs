//! Evaluation: Fréchet distance between Gaussian fits, mode coverage,
//! interpolation paths, and the combined evaluation suite.

use serde::{Deserialize, Serialize};

use crate::cwdist::{cw2_to_gaussian_value, CwConfig};
use crate::datasets::Dataset;
use crate::error::{shape_err, Error, Result};
use crate::nets::ModelBundle;
use crate::tensor::Tensor;
use crate::training::{sample, SamplePath};

/// Mean and unbiased covariance of a sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FrechetStats {
    pub mean: Vec<f64>,
    pub cov: Tensor,
    pub n: usize,
}

pub fn fit_gaussian(x: &Tensor) -> Result<FrechetStats> {
    if x.ndim() != 2 {
        return shape_err(format!("expected n × d, got {:?}", x.shape()));
    }
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::InvalidArgument(format!("fit_gaussian needs n ≥ 2, got {n}")));
    }
    let mut mean = vec![0.0; d];
    for r in x.iter_rows() {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centered = x.clone();
    for i in 0..n {
        centered.row_mut(i).iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
    }
    let mut cov = centered.transpose()?.matmul(&centered)?;
    cov.data_mut().iter_mut().for_each(|v| *v /= (n - 1) as f64);
    symmetrize(&mut cov);
    Ok(FrechetStats { mean, cov, n })
}

fn symmetrize(m: &mut Tensor) {
    let d = m.rows();
    let a = m.data_mut();
    for i in 0..d {
        for j in i + 1..d {
            let v = 0.5 * (a[i * d + j] + a[j * d + i]);
            a[i * d + j] = v;
            a[j * d + i] = v;
        }
    }
}

/// Eigenvalues and column eigenvectors of a symmetric matrix by cyclic
/// Jacobi rotations. Stops when the off-diagonal Frobenius norm drops below
/// `1e-12` or after 100 sweeps.
pub fn symmetric_eigen(s: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    if s.ndim() != 2 || s.rows() != s.cols() {
        return shape_err(format!("expected a square matrix, got {:?}", s.shape()));
    }
    let d = s.rows();
    let mut a = s.data().to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    s += a[i * d + j] * a[i * d + j];
                }
            }
        }
        s.sqrt()
    };
    for _sweep in 0..100 {
        if off(&a) < 1e-12 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[p * d + p], a[q * d + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..d {
                    let (akp, akq) = (a[k * d + p], a[k * d + q]);
                    a[k * d + p] = c * akp - sn * akq;
                    a[k * d + q] = sn * akp + c * akq;
                }
                for k in 0..d {
                    let (apk, aqk) = (a[p * d + k], a[q * d + k]);
                    a[p * d + k] = c * apk - sn * aqk;
                    a[q * d + k] = sn * apk + c * aqk;
                }
                for k in 0..d {
                    let (vkp, vkq) = (v[k * d + p], v[k * d + q]);
                    v[k * d + p] = c * vkp - sn * vkq;
                    v[k * d + q] = sn * vkp + c * vkq;
                }
            }
        }
    }
    let eig = (0..d).map(|i| a[i * d + i]).collect();
    Ok((eig, Tensor::matrix(d, d, v)?))
}

/// Principal square root of a symmetric PSD matrix; negative eigenvalues
/// from rounding are clamped to zero.
pub fn sqrt_psd(s: &Tensor) -> Result<Tensor> {
    let (eig, v) = symmetric_eigen(s)?;
    let d = eig.len();
    let mut scaled = v.clone();
    for i in 0..d {
        for (j, e) in eig.iter().enumerate() {
            scaled.data_mut()[i * d + j] *= e.max(0.0).sqrt();
        }
    }
    let mut out = scaled.matmul(&v.transpose()?)?;
    symmetrize(&mut out);
    Ok(out)
}

/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2 (Σ_a Σ_b)^{1/2})`, clamped at zero. The
/// trace of the cross term is taken from the eigenvalues of
/// `Σ_a^{1/2} Σ_b Σ_a^{1/2}`.
pub fn frechet_distance(a: &FrechetStats, b: &FrechetStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return shape_err(format!(
            "Fréchet distance between dimensions {} and {}",
            a.mean.len(),
            b.mean.len()
        ));
    }
    let d = a.mean.len();
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let trace = |m: &Tensor| (0..d).map(|i| m.data()[i * d + i]).sum::<f64>();
    let ra = sqrt_psd(&a.cov)?;
    let mut m = ra.matmul(&b.cov)?.matmul(&ra)?;
    symmetrize(&mut m);
    let (eig, _) = symmetric_eigen(&m)?;
    let cross: f64 = eig.iter().map(|e| e.max(0.0).sqrt()).sum();
    Ok((mean_term + trace(&a.cov) + trace(&b.cov) - 2.0 * cross).max(0.0))
}

/// Fréchet proxy between two samples. When the dimension exceeds either
/// sample size both covariances get `1e-6 · I` added.
pub fn frechet_between(x: &Tensor, y: &Tensor) -> Result<f64> {
    let mut a = fit_gaussian(x)?;
    let mut b = fit_gaussian(y)?;
    let d = x.cols();
    if d > x.rows().min(y.rows()) {
        for s in [&mut a, &mut b] {
            for i in 0..d {
                s.cov.data_mut()[i * d + i] += 1e-6;
            }
        }
    }
    frechet_distance(&a, &b)
}

/// Samples per mode after nearest-center assignment within a radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeCoverage {
    pub counts: Vec<usize>,
    pub unassigned: usize,
    pub total: usize,
}

impl ModeCoverage {
    pub fn fractions(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| c as f64 / self.total.max(1) as f64)
            .collect()
    }

    /// Modes holding at least `min_fraction` of all samples.
    pub fn covered(&self, min_fraction: f64) -> usize {
        self.fractions().iter().filter(|&&f| f >= min_fraction && f > 0.0).count()
    }
}

pub fn mode_coverage(samples: &Tensor, centers: &Tensor, radius: f64) -> Result<ModeCoverage> {
    if centers.rows() == 0 {
        return Err(Error::InvalidArgument("mode_coverage needs at least one center".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
    }
    if samples.cols() != centers.cols() {
        return shape_err(format!(
            "samples have dimension {}, centers {}",
            samples.cols(),
            centers.cols()
        ));
    }
    let mut counts = vec![0; centers.rows()];
    let mut unassigned = 0;
    for s in samples.iter_rows() {
        let (best, dist2) = nearest(s, centers);
        if dist2 <= radius * radius {
            counts[best] += 1;
        } else {
            unassigned += 1;
        }
    }
    Ok(ModeCoverage {
        counts,
        unassigned,
        total: samples.rows(),
    })
}

fn nearest(p: &[f64], set: &Tensor) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in set.iter_rows().enumerate() {
        let d: f64 = p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpolationMode {
    /// Straight line between the transported endpoints in latent space.
    LinearLatent,
    /// The generator applied to a straight line in noise space.
    DensityBased,
}

impl std::str::FromStr for InterpolationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "linear_latent" => Ok(Self::LinearLatent),
            "density" | "density_based" => Ok(Self::DensityBased),
            other => Err(Error::Config(format!("unknown interpolation mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationPath {
    pub mode: InterpolationMode,
    /// `α_i = 1 − i/(k−1)`, from 1 down to 0.
    pub alphas: Vec<f64>,
    pub latent: Tensor,
    pub decoded: Tensor,
}

/// Path between `LG(z′₁)` (α = 1) and `LG(z′_k)` (α = 0) in `steps` points.
///
/// Endpoints are transported and decoded by the same calls in both modes,
/// so they agree bit for bit.
pub fn interpolate(
    bundle: &ModelBundle,
    z1: &[f64],
    zk: &[f64],
    steps: usize,
    mode: InterpolationMode,
) -> Result<InterpolationPath> {
    let lg = bundle.generator()?;
    if steps < 2 {
        return Err(Error::InvalidArgument(format!("interpolation needs ≥ 2 steps, got {steps}")));
    }
    if z1.len() != bundle.noise_dim || zk.len() != bundle.noise_dim {
        return shape_err(format!("endpoints must have noise dimension {}", bundle.noise_dim));
    }
    let alphas: Vec<f64> = (0..steps)
        .map(|i| 1.0 - i as f64 / (steps - 1) as f64)
        .collect();
    let ends = lg.apply(&Tensor::from_rows(&[z1, zk])?)?;
    let (l1, lk) = (ends.row(0).to_vec(), ends.row(1).to_vec());
    let interior = &alphas[1..steps - 1];
    let mix = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| t * x + (1.0 - t) * y).collect()
    };
    let inner: Option<Tensor> = if interior.is_empty() {
        None
    } else {
        Some(match mode {
            InterpolationMode::LinearLatent => {
                let rows: Vec<Vec<f64>> = interior.iter().map(|&t| mix(&l1, &lk, t)).collect();
                Tensor::from_rows(&rows)?
            }
            InterpolationMode::DensityBased => {
                let rows: Vec<Vec<f64>> = interior.iter().map(|&t| mix(z1, zk, t)).collect();
                lg.apply(&Tensor::from_rows(&rows)?)?
            }
        })
    };
    let decoded_ends = bundle.decode(&ends)?;
    let (latent, decoded) = match inner {
        None => (ends, decoded_ends),
        Some(inner) => {
            let dec_inner = bundle.decode(&inner)?;
            let latent = stack3(ends.row(0), &inner, ends.row(1))?;
            let decoded = stack3(decoded_ends.row(0), &dec_inner, decoded_ends.row(1))?;
            (latent, decoded)
        }
    };
    Ok(InterpolationPath {
        mode,
        alphas,
        latent,
        decoded,
    })
}

fn stack3(first: &[f64], middle: &Tensor, last: &[f64]) -> Result<Tensor> {
    let mut rows: Vec<&[f64]> = vec![first];
    rows.extend(middle.iter_rows());
    rows.push(last);
    Tensor::from_rows(&rows)
}

/// Mean over path points of the Euclidean distance to the nearest code.
pub fn mean_nearest_distance(points: &Tensor, codes: &Tensor) -> Result<f64> {
    if points.cols() != codes.cols() || codes.rows() == 0 {
        return shape_err("mean_nearest_distance needs non-empty codes of matching dimension");
    }
    let total: f64 = points.iter_rows().map(|p| nearest(p, codes).1.sqrt()).sum();
    Ok(total / points.rows() as f64)
}

/// Options of [`eval_suite`].
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub samples: usize,
    pub seed: u64,
    /// Radius for mode coverage; ignored without known centers.
    pub coverage_radius: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            samples: 10_000,
            seed: 0,
            coverage_radius: 1.0,
        }
    }
}

/// Held-out metrics of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rec_mse: Option<f64>,
    pub latent_cw2: Option<f64>,
    pub frechet_prior: Option<f64>,
    pub frechet_lcw: Option<f64>,
    pub coverage_prior: Option<ModeCoverage>,
    pub coverage_lcw: Option<ModeCoverage>,
}

impl EvalReport {
    pub fn values(&self) -> Vec<f64> {
        [self.rec_mse, self.latent_cw2, self.frechet_prior, self.frechet_lcw]
            .into_iter()
            .flatten()
            .collect()
    }
}

/// Reconstruction MSE and latent normality on the validation split, and the
/// Fréchet proxy of each available sampler against it.
pub fn eval_suite(bundle: &ModelBundle, ds: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    let val = ds.validation();
    if val.cols() != bundle.data_dim {
        return Err(Error::Incompatible(format!(
            "data dimension {} but model expects {}",
            val.cols(),
            bundle.data_dim
        )));
    }
    let coverage = |s: &Tensor| -> Result<Option<ModeCoverage>> {
        ds.centers
            .as_ref()
            .map(|c| mode_coverage(s, c, opts.coverage_radius))
            .transpose()
    };
    let mut report = EvalReport {
        rec_mse: None,
        latent_cw2: None,
        frechet_prior: None,
        frechet_lcw: None,
        coverage_prior: None,
        coverage_lcw: None,
    };
    if bundle.encoder.is_some() {
        let z = bundle.encode(&val)?;
        let xhat = bundle.decode(&z)?;
        let se: f64 = val.data().iter().zip(xhat.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        report.rec_mse = Some(se / val.rows() as f64);
        if bundle.latent_dim >= 2 {
            report.latent_cw2 = Some(cw2_to_gaussian_value(&z, &CwConfig::gaussian(bundle.latent_dim)?)?);
        }
        let s = sample(bundle, opts.samples, opts.seed, SamplePath::Prior)?;
        report.frechet_prior = Some(frechet_between(&val, &s)?);
        report.coverage_prior = coverage(&s)?;
    }
    if bundle.generator.is_some() {
        let s = sample(bundle, opts.samples, opts.seed, SamplePath::Lcw)?;
        report.frechet_lcw = Some(frechet_between(&val, &s)?);
        report.coverage_lcw = coverage(&s)?;
    }
    Ok(report)
}
