//! Objectives and training loops.
//!
//! Stage one fits an autoencoder (plain, CWAE or CW²). Stage two freezes it
//! and fits a latent generator `LG` that carries Gaussian noise onto the
//! encoded data. Direct generators map noise to data in one network and are
//! trained against a data-space distance.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{clip_global_norm, AdamState, Graph, NormMode, Var};
use crate::cwdist::{cw2_to_gaussian, cw2_two_samples, log_cw, sliced_wasserstein, CwConfig};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::eval;
use crate::nets::{build_latent_generator_with, Activation, Architecture, Mlp, ModelBundle};
use crate::rng::{self, tag};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Ae,
    Cwae,
    Cw2,
    Lt,
    CwGen,
    SwGen,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "ae" => Self::Ae,
            "cwae" => Self::Cwae,
            "cw2" => Self::Cw2,
            "lt" => Self::Lt,
            "cw_gen" | "cw-gen" | "cw" => Self::CwGen,
            "sw_gen" | "sw-gen" | "sw" => Self::SwGen,
            other => return Err(Error::Config(format!("unknown objective `{other}`"))),
        })
    }
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ae => "ae",
            Self::Cwae => "cwae",
            Self::Cw2 => "cw2",
            Self::Lt => "lt",
            Self::CwGen => "cw_gen",
            Self::SwGen => "sw_gen",
        }
    }
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub lr: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub data_dim: usize,
    pub latent_dim: usize,
    pub noise_dim: usize,
    pub seed: u64,
    pub sw_num_dirs: usize,
    /// Epoch interval of the Fréchet proxy in the metrics; 0 disables it.
    pub eval_every: usize,
    /// Generated samples used by the in-training Fréchet proxy.
    pub eval_samples: usize,
    /// Wraps the CW² reconstruction term in `log` as well (ablation).
    pub log_both: bool,
    pub clip_norm: f64,
    pub record_wall_time: bool,
}

impl TrainConfig {
    pub fn new(objective: Objective, data_dim: usize, latent_dim: usize, noise_dim: usize) -> Self {
        Self {
            objective,
            lr: 1e-3,
            lambda: 1.0,
            batch_size: 128,
            epochs: 100,
            data_dim,
            latent_dim,
            noise_dim,
            seed: 0,
            sw_num_dirs: 1000,
            eval_every: 0,
            eval_samples: 10_000,
            log_both: false,
            clip_norm: 5.0,
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size < 2 {
            return fail(format!("batch_size must be ≥ 2, got {}", self.batch_size));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        let uses_lambda = matches!(self.objective, Objective::Cwae | Objective::Cw2);
        if uses_lambda && !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.data_dim == 0 || self.latent_dim == 0 || self.noise_dim == 0 {
            return fail("dimensions must be positive".into());
        }
        if self.objective == Objective::SwGen && self.sw_num_dirs == 0 {
            return fail("sw_num_dirs must be ≥ 1".into());
        }
        if !(self.clip_norm > 0.0) {
            return fail(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        Ok(())
    }
}

/// One row of the training metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub loss: f64,
    pub rec_term: Option<f64>,
    pub latent_term: Option<f64>,
    /// Fréchet proxy between validation data and samples of the run's own
    /// sampler: the prior path in stage one, the generator otherwise.
    pub frechet_prior: Option<f64>,
    pub wall_s: Option<f64>,
}

/// A differentiable objective value with its parts.
pub struct Loss {
    pub total: Var,
    /// Reconstruction term (`None` for objectives without one).
    pub rec: Option<Var>,
    /// Latent or distribution-matching term.
    pub latent: Option<Var>,
    /// Trainable parameter nodes, in the order the networks list them.
    pub params: Vec<Var>,
}

fn gaussian_term(g: &mut Graph, z: Var, latent_dim: usize) -> Result<Var> {
    cw2_to_gaussian(g, z, &CwConfig::gaussian(latent_dim)?)
}

/// `mean_i ‖x_i − x̂_i‖²`.
fn mse(g: &mut Graph, x: Var, xhat: Var) -> Result<Var> {
    let n = g.value(x).rows() as f64;
    let d = g.sub(x, xhat)?;
    let sq = g.square(d)?;
    let s = g.sum(sq, None)?;
    Ok(g.scale(s, 1.0 / n))
}

struct AutoencoderPass {
    x: Var,
    z: Var,
    xhat: Var,
    params: Vec<Var>,
}

fn autoencode(g: &mut Graph, x: &Tensor, bundle: &mut ModelBundle) -> Result<AutoencoderPass> {
    let encoder = bundle.encoder.as_mut().ok_or(Error::MissingNetwork("encoder"))?;
    let xv = g.constant(x.clone());
    let e = encoder.forward(g, xv, NormMode::Train, true)?;
    let d = bundle.decoder.forward(g, e.output, NormMode::Train, true)?;
    let mut params = e.params;
    params.extend(d.params);
    Ok(AutoencoderPass {
        x: xv,
        z: e.output,
        xhat: d.output,
        params,
    })
}

/// Plain autoencoder: `MSE(X, D(E(X)))`. The latent term is reported for
/// monitoring only and carries no gradient.
pub fn loss_ae(g: &mut Graph, x: &Tensor, bundle: &mut ModelBundle, cfg: &TrainConfig) -> Result<Loss> {
    let p = autoencode(g, x, bundle)?;
    let rec = mse(g, p.x, p.xhat)?;
    let zc = g.detach(p.z);
    let latent = gaussian_term(g, zc, cfg.latent_dim)?;
    Ok(Loss {
        total: rec,
        rec: Some(rec),
        latent: Some(latent),
        params: p.params,
    })
}

/// `J_CW = MSE(X, D(E(X))) + λ log d²_CW(E(X), N(0, I))`.
pub fn loss_cwae(g: &mut Graph, x: &Tensor, bundle: &mut ModelBundle, cfg: &TrainConfig) -> Result<Loss> {
    let p = autoencode(g, x, bundle)?;
    let rec = mse(g, p.x, p.xhat)?;
    let latent = gaussian_term(g, p.z, cfg.latent_dim)?;
    let total = weighted_log_sum(g, rec, latent, cfg)?;
    Ok(Loss {
        total,
        rec: Some(rec),
        latent: Some(latent),
        params: p.params,
    })
}

/// `J_CW² = d²_CW(X, D(E(X))) + λ log d²_CW(E(X), N(0, I))` with a pooled
/// bandwidth for the set-level reconstruction term.
pub fn loss_cw2(g: &mut Graph, x: &Tensor, bundle: &mut ModelBundle, cfg: &TrainConfig) -> Result<Loss> {
    let p = autoencode(g, x, bundle)?;
    let rec = cw2_two_samples(g, p.x, p.xhat, &CwConfig::pooled(cfg.data_dim)?)?;
    let rec_in_loss = if cfg.log_both {
        log_cw(g, rec, &CwConfig::pooled(cfg.data_dim)?)?
    } else {
        rec
    };
    let latent = gaussian_term(g, p.z, cfg.latent_dim)?;
    let total = weighted_log_sum(g, rec_in_loss, latent, cfg)?;
    Ok(Loss {
        total,
        rec: Some(rec),
        latent: Some(latent),
        params: p.params,
    })
}

fn weighted_log_sum(g: &mut Graph, rec: Var, latent: Var, cfg: &TrainConfig) -> Result<Var> {
    let l = log_cw(g, latent, &CwConfig::gaussian(cfg.latent_dim)?)?;
    let l = g.scale(l, cfg.lambda);
    g.add(rec, l)
}

/// `J_LT = d²_CW(E(X), LG(Z′))`. The encoder is frozen: only the generator's
/// parameters are returned.
pub fn loss_lt(
    g: &mut Graph,
    x: &Tensor,
    zprime: &Tensor,
    bundle: &mut ModelBundle,
    cfg: &TrainConfig,
) -> Result<Loss> {
    let z = bundle.encode(x)?;
    let generator = bundle.generator.as_mut().ok_or(Error::MissingNetwork("latent generator"))?;
    loss_lt_encoded(g, &z, zprime, generator, cfg)
}

/// [`loss_lt`] on already encoded data.
pub fn loss_lt_encoded(
    g: &mut Graph,
    z: &Tensor,
    zprime: &Tensor,
    generator: &mut Mlp,
    cfg: &TrainConfig,
) -> Result<Loss> {
    if z.rows() != zprime.rows() {
        return Err(Error::InvalidArgument(format!(
            "noise batch has {} rows for {} data rows",
            zprime.rows(),
            z.rows()
        )));
    }
    let zv = g.constant(z.clone());
    let nv = g.constant(zprime.clone());
    let f = generator.forward(g, nv, NormMode::Train, true)?;
    let d = cw2_two_samples(g, zv, f.output, &CwConfig::pooled(cfg.latent_dim)?)?;
    Ok(Loss {
        total: d,
        rec: None,
        latent: Some(d),
        params: f.params,
    })
}

/// Direct generator loss: `d²_CW(X, G(Z′))` or the sliced Wasserstein
/// distance, where `G = D ∘ LG` is trained end to end. `step` varies the
/// projection directions of the sliced variant.
pub fn loss_direct_generator(
    g: &mut Graph,
    x: &Tensor,
    zprime: &Tensor,
    generator: &mut ModelBundle,
    cfg: &TrainConfig,
    step: u64,
) -> Result<Loss> {
    let lg = generator.generator.as_mut().ok_or(Error::MissingNetwork("generator"))?;
    let xv = g.constant(x.clone());
    let nv = g.constant(zprime.clone());
    let a = lg.forward(g, nv, NormMode::Train, true)?;
    let b = generator.decoder.forward(g, a.output, NormMode::Train, true)?;
    let d = match cfg.objective {
        Objective::CwGen => cw2_two_samples(g, xv, b.output, &CwConfig::pooled(cfg.data_dim)?)?,
        Objective::SwGen => {
            let seed = rand::RngCore::next_u64(&mut rng::substream(cfg.seed, tag::PROJECTION, step));
            sliced_wasserstein(g, xv, b.output, cfg.sw_num_dirs, seed)?
        }
        other => {
            return Err(Error::Config(format!(
                "objective {} is not a direct generator",
                other.name()
            )))
        }
    };
    let mut params = a.params;
    params.extend(b.params);
    Ok(Loss {
        total: d,
        rec: None,
        latent: Some(d),
        params,
    })
}

/// Which sampler a bundle is evaluated through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplePath {
    /// `D(z)`, `z ~ N(0, I)` in latent space.
    Prior,
    /// `D(LG(z′))`, `z′ ~ N(0, I)` in noise space.
    Lcw,
}

impl std::str::FromStr for SamplePath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prior" => Ok(Self::Prior),
            "lcw" => Ok(Self::Lcw),
            other => Err(Error::Config(format!("unknown sample path `{other}`"))),
        }
    }
}

/// `n` samples through the chosen path; generators run in eval mode. The
/// prior path needs an autoencoder, the `Lcw` path a latent generator.
pub fn sample(bundle: &ModelBundle, n: usize, seed: u64, path: SamplePath) -> Result<Tensor> {
    let mut r = rng::stream(seed, tag::SAMPLE);
    match path {
        SamplePath::Prior => {
            bundle.encoder()?;
            let z = rng::normal_matrix(&mut r, n, bundle.latent_dim);
            bundle.decode(&z)
        }
        SamplePath::Lcw => {
            bundle.generator()?;
            let zp = rng::normal_matrix(&mut r, n, bundle.noise_dim);
            bundle.decode(&bundle.transport(&zp)?)
        }
    }
}

/// Output of a training loop.
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub metrics: Vec<MetricsRecord>,
}

struct EpochStats {
    loss: f64,
    rec: Option<f64>,
    latent: Option<f64>,
    steps: usize,
}

impl EpochStats {
    fn new() -> Self {
        Self {
            loss: 0.0,
            rec: None,
            latent: None,
            steps: 0,
        }
    }

    fn add(&mut self, g: &Graph, loss: &Loss) -> Result<()> {
        let v = g.value(loss.total).item()?;
        if !v.is_finite() {
            return Err(Error::Domain(format!("non-finite loss {v}")));
        }
        self.loss += v;
        if let Some(r) = loss.rec {
            *self.rec.get_or_insert(0.0) += g.value(r).item()?;
        }
        if let Some(l) = loss.latent {
            *self.latent.get_or_insert(0.0) += g.value(l).item()?;
        }
        self.steps += 1;
        Ok(())
    }

    fn record(&self, epoch: usize, frechet: Option<f64>, wall: Option<f64>) -> MetricsRecord {
        let k = self.steps as f64;
        MetricsRecord {
            epoch,
            loss: self.loss / k,
            rec_term: self.rec.map(|v| v / k),
            latent_term: self.latent.map(|v| v / k),
            frechet_prior: frechet,
            wall_s: wall,
        }
    }
}

/// Runs backward, clips, and applies Adam to `params` (matching `loss.params`).
fn optimize(
    g: &mut Graph,
    loss: &Loss,
    params: &mut [&mut Tensor],
    adam: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    g.backward(loss.total)?;
    let mut grads: Vec<Tensor> = loss
        .params
        .iter()
        .zip(params.iter())
        .map(|(v, p)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    clip_global_norm(&mut grads, cfg.clip_norm);
    adam.step(params, &grads, cfg.lr)
}

fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::substream(seed, tag::SHUFFLE, epoch as u64));
    idx.chunks_exact(batch).map(|c| c.to_vec()).collect()
}

fn check_size(n: usize, cfg: &TrainConfig) -> Result<()> {
    if n < cfg.batch_size {
        return Err(Error::InvalidArgument(format!(
            "training split has {n} points, fewer than batch_size {}",
            cfg.batch_size
        )));
    }
    Ok(())
}

fn wants_eval(cfg: &TrainConfig, epoch: usize) -> bool {
    cfg.eval_every > 0 && (epoch.is_multiple_of(cfg.eval_every) || epoch == cfg.epochs)
}

/// Stage one: trains encoder and decoder with the AE, CWAE or CW² objective.
pub fn train_stage1(
    ds: &Dataset,
    cfg: &TrainConfig,
    arch: &Architecture,
    final_activation: Activation,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let loss_fn = match cfg.objective {
        Objective::Ae => loss_ae,
        Objective::Cwae => loss_cwae,
        Objective::Cw2 => loss_cw2,
        other => {
            return Err(Error::Config(format!(
                "objective {} is not a stage-one objective",
                other.name()
            )))
        }
    };
    check_dims(ds, cfg)?;
    let train = ds.train();
    check_size(train.rows(), cfg)?;
    let val = ds.validation();
    let mut bundle = ModelBundle::autoencoder(
        cfg.data_dim,
        cfg.latent_dim,
        cfg.noise_dim,
        final_activation,
        arch,
        cfg.seed,
    )?;
    let mut adam = AdamState::new();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();
    for epoch in 1..=cfg.epochs {
        let mut stats = EpochStats::new();
        for batch in epoch_batches(train.rows(), cfg.batch_size, cfg.seed, epoch) {
            let x = train.select_rows(&batch)?;
            let mut g = Graph::new();
            let loss = loss_fn(&mut g, &x, &mut bundle, cfg)?;
            stats.add(&g, &loss)?;
            let ModelBundle { encoder, decoder, .. } = &mut bundle;
            let mut params = encoder.as_mut().expect("built above").params_mut();
            params.extend(decoder.params_mut());
            optimize(&mut g, &loss, &mut params, &mut adam, cfg)?;
        }
        let frechet = if wants_eval(cfg, epoch) {
            let samples = sample(&bundle, cfg.eval_samples, cfg.seed ^ epoch as u64, SamplePath::Prior)?;
            Some(eval::frechet_between(&val, &samples)?)
        } else {
            None
        };
        let wall = cfg.record_wall_time.then(|| start.elapsed().as_secs_f64());
        metrics.push(stats.record(epoch, frechet, wall));
    }
    bundle.stage1_epochs = cfg.epochs;
    Ok(TrainOutcome { bundle, metrics })
}

fn check_dims(ds: &Dataset, cfg: &TrainConfig) -> Result<()> {
    if ds.dim() != cfg.data_dim {
        return Err(Error::Incompatible(format!(
            "dataset has dimension {}, config says {}",
            ds.dim(),
            cfg.data_dim
        )));
    }
    Ok(())
}

/// Stage two: fits a fresh latent generator to the frozen encoder's codes.
///
/// The training split is encoded once; noise is drawn fresh for every batch.
/// Encoder and decoder are returned untouched.
pub fn train_stage2(
    ds: &Dataset,
    stage1: &ModelBundle,
    cfg: &TrainConfig,
    arch: &Architecture,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.objective != Objective::Lt {
        return Err(Error::Config(format!(
            "stage two uses the lt objective, got {}",
            cfg.objective.name()
        )));
    }
    stage1.encoder()?;
    if stage1.stage1_epochs == 0 {
        return Err(Error::Incompatible("stage-one model was never trained".into()));
    }
    if stage1.latent_dim != cfg.latent_dim || stage1.data_dim != cfg.data_dim {
        return Err(Error::Incompatible(format!(
            "model is {} → {}, config says {} → {}",
            stage1.data_dim, stage1.latent_dim, cfg.data_dim, cfg.latent_dim
        )));
    }
    check_dims(ds, cfg)?;
    let codes = stage1.encode(&ds.train())?;
    check_size(codes.rows(), cfg)?;
    let val = ds.validation();

    let mut bundle = stage1.clone();
    bundle.noise_dim = cfg.noise_dim;
    let mut generator = build_latent_generator_with(cfg.noise_dim, cfg.latent_dim, arch, cfg.seed)?;
    let mut adam = AdamState::new();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let mut stats = EpochStats::new();
        for batch in epoch_batches(codes.rows(), cfg.batch_size, cfg.seed, epoch) {
            let z = codes.select_rows(&batch)?;
            let zp = rng::normal_matrix(
                &mut rng::substream(cfg.seed, tag::NOISE, step),
                batch.len(),
                cfg.noise_dim,
            );
            step += 1;
            let mut g = Graph::new();
            let loss = loss_lt_encoded(&mut g, &z, &zp, &mut generator, cfg)?;
            stats.add(&g, &loss)?;
            optimize(&mut g, &loss, &mut generator.params_mut(), &mut adam, cfg)?;
        }
        let frechet = if wants_eval(cfg, epoch) {
            bundle.generator = Some(generator.clone());
            let samples = sample(&bundle, cfg.eval_samples, cfg.seed ^ epoch as u64, SamplePath::Lcw)?;
            Some(eval::frechet_between(&val, &samples)?)
        } else {
            None
        };
        let wall = cfg.record_wall_time.then(|| start.elapsed().as_secs_f64());
        metrics.push(stats.record(epoch, frechet, wall));
    }
    bundle.generator = Some(generator);
    bundle.validate()?;
    Ok(TrainOutcome { bundle, metrics })
}

/// Trains a direct noise-to-data generator with the CW or SW distance.
pub fn train_generator(
    ds: &Dataset,
    cfg: &TrainConfig,
    arch: &Architecture,
    final_activation: Activation,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if !matches!(cfg.objective, Objective::CwGen | Objective::SwGen) {
        return Err(Error::Config(format!(
            "objective {} is not a direct generator",
            cfg.objective.name()
        )));
    }
    check_dims(ds, cfg)?;
    let train = ds.train();
    check_size(train.rows(), cfg)?;
    let val = ds.validation();
    let mut bundle = ModelBundle::direct_generator(
        cfg.data_dim,
        cfg.latent_dim,
        cfg.noise_dim,
        final_activation,
        arch,
        cfg.seed,
    )?;
    let mut adam = AdamState::new();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let mut stats = EpochStats::new();
        for batch in epoch_batches(train.rows(), cfg.batch_size, cfg.seed, epoch) {
            let x = train.select_rows(&batch)?;
            let zp = rng::normal_matrix(
                &mut rng::substream(cfg.seed, tag::NOISE, step),
                batch.len(),
                cfg.noise_dim,
            );
            let mut g = Graph::new();
            let loss = loss_direct_generator(&mut g, &x, &zp, &mut bundle, cfg, step)?;
            step += 1;
            stats.add(&g, &loss)?;
            let ModelBundle { generator, decoder, .. } = &mut bundle;
            let mut params = generator.as_mut().expect("built above").params_mut();
            params.extend(decoder.params_mut());
            optimize(&mut g, &loss, &mut params, &mut adam, cfg)?;
        }
        let frechet = if wants_eval(cfg, epoch) {
            let samples = sample(&bundle, cfg.eval_samples, cfg.seed ^ epoch as u64, SamplePath::Lcw)?;
            Some(eval::frechet_between(&val, &samples)?)
        } else {
            None
        };
        let wall = cfg.record_wall_time.then(|| start.elapsed().as_secs_f64());
        metrics.push(stats.record(epoch, frechet, wall));
    }
    Ok(TrainOutcome { bundle, metrics })
}
