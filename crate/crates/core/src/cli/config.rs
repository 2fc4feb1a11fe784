//! Run configuration files.
//!
//! A run file is TOML with a top-level `seed` and one level of sections.
//! `data.preset` selects a built-in template whose values fill every key the
//! file leaves out; keys the template does not know are rejected by name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::datasets::{self, Dataset};
use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::nets::{Activation, Architecture};
use crate::training::{Objective, TrainConfig};

/// Built-in templates, by preset name.
pub const PRESETS: [(&str, &str); 6] = [
    ("ring", include_str!("presets/ring.toml")),
    ("ring16", include_str!("presets/ring16.toml")),
    ("moons", include_str!("presets/moons.toml")),
    ("checkerboard", include_str!("presets/checkerboard.toml")),
    ("mnist", include_str!("presets/mnist.toml")),
    ("file", include_str!("presets/file.toml")),
];

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    seed: u64,
    data: DataSection,
    model: ModelSection,
    stage1: Stage1Section,
    stage2: StageSection,
    generator: GeneratorSection,
    eval: EvalSection,
    output: OutputSection,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    preset: String,
    validation_fraction: f64,
    n: Option<usize>,
    modes: Option<usize>,
    radius: Option<f64>,
    std: Option<f64>,
    embed_dim: Option<usize>,
    rotation_seed: Option<u64>,
    noise_std: Option<f64>,
    grid: Option<usize>,
    dir: Option<PathBuf>,
    limit: Option<usize>,
    path: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    latent_dim: usize,
    noise_dim: usize,
    hidden_width: usize,
    hidden_layers: usize,
    generator_width: usize,
    generator_layers: usize,
    output: Activation,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Stage1Section {
    objective: String,
    lr: f64,
    lambda: f64,
    batch_size: usize,
    epochs: usize,
    eval_every: usize,
    log_both: bool,
    clip_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageSection {
    lr: f64,
    batch_size: usize,
    epochs: usize,
    eval_every: usize,
    clip_norm: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorSection {
    distance: Distance,
    lr: f64,
    batch_size: usize,
    epochs: usize,
    sw_dirs: usize,
    eval_every: usize,
    clip_norm: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalSection {
    samples: usize,
    coverage_radius: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: PathBuf,
    name: String,
    record_wall_time: bool,
}

/// Data-space distance of a direct generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Cw,
    Sw,
}

impl std::str::FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cw" => Ok(Self::Cw),
            "sw" => Ok(Self::Sw),
            other => Err(Error::Config(format!("unknown distance `{other}`"))),
        }
    }
}

/// Where the points come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Ring {
        n: usize,
        modes: usize,
        radius: f64,
        std: f64,
        embed_dim: Option<usize>,
        rotation_seed: Option<u64>,
    },
    Moons {
        n: usize,
        noise_std: f64,
    },
    Checkerboard {
        n: usize,
        grid: usize,
    },
    Mnist {
        dir: PathBuf,
        limit: Option<usize>,
    },
    File {
        path: PathBuf,
    },
}

/// A reproducible dataset with its split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub preset: String,
    pub source: DataSource,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl DataSpec {
    /// Generates or reads the points and applies the seeded split.
    pub fn load(&self) -> Result<Dataset> {
        let ds = match &self.source {
            DataSource::Ring {
                n,
                modes,
                radius,
                std,
                embed_dim,
                rotation_seed,
            } => {
                let ring = datasets::gaussian_ring(*modes, *radius, *std, *n, self.seed)?;
                match embed_dim {
                    Some(d) => datasets::embed_rotated(&ring, *d, rotation_seed.unwrap_or(0))?,
                    None => ring,
                }
            }
            DataSource::Moons { n, noise_std } => datasets::two_moons(*n, *noise_std, self.seed)?,
            DataSource::Checkerboard { n, grid } => datasets::checkerboard(*n, *grid, self.seed)?,
            DataSource::Mnist { dir, limit } => {
                let images = find_idx(dir, "train-images-idx3-ubyte")?;
                let labels = find_idx(dir, "train-labels-idx1-ubyte").ok();
                datasets::load_idx(&images, labels.as_deref(), limit.filter(|&l| l > 0))?
            }
            DataSource::File { path } => Dataset::new(path.display().to_string(), datasets::read_points(path)?)?,
        };
        datasets::split(&ds, self.validation_fraction, self.seed)
    }
}

fn find_idx(dir: &Path, stem: &str) -> Result<PathBuf> {
    [dir.join(stem), dir.join(format!("{stem}.gz"))]
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| {
            Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no {stem}[.gz] in {}", dir.display()),
            ))
        })
}

/// Hyperparameters of one later stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageOptions {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub clip_norm: f64,
}

/// A fully resolved run file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSpec,
    pub arch: Architecture,
    pub output_activation: Activation,
    pub latent_dim: usize,
    pub noise_dim: usize,
    pub objective: Objective,
    pub lr: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub log_both: bool,
    pub clip_norm: f64,
    pub stage2: StageOptions,
    pub distance: Distance,
    pub generator: StageOptions,
    pub sw_dirs: usize,
    pub eval_samples: usize,
    pub coverage_radius: f64,
    pub out_dir: PathBuf,
    pub name: String,
    pub record_wall_time: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The template of `name` without changes.
    pub fn preset(name: &str) -> Result<Self> {
        Self::parse(&format!("[data]\npreset = \"{name}\"\n"))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let user: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let preset = user
            .get("data")
            .and_then(|d| d.get("preset"))
            .ok_or_else(|| Error::Config("missing key `data.preset`".into()))?
            .as_str()
            .ok_or_else(|| Error::Config("`data.preset` must be a string".into()))?
            .to_string();
        let template = preset_text(&preset).ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            Error::Config(format!("unknown preset `{preset}`; expected one of {}", names.join(", ")))
        })?;
        let mut merged: Table = template.parse().expect("built-in presets parse");
        overlay(&mut merged, user)?;
        if preset == "file" && !text_sets(text, "path") {
            return Err(Error::Config("preset `file` needs `data.path`".into()));
        }
        let file = RunFile::deserialize(Value::Table(merged)).map_err(|e| Error::Config(e.to_string()))?;
        Self::resolve(file)
    }

    fn resolve(f: RunFile) -> Result<Self> {
        let d = f.data;
        let missing = |k: &str| Error::Config(format!("missing key `data.{k}`"));
        let source = match d.preset.as_str() {
            "ring" | "ring16" => DataSource::Ring {
                n: d.n.ok_or_else(|| missing("n"))?,
                modes: d.modes.ok_or_else(|| missing("modes"))?,
                radius: d.radius.ok_or_else(|| missing("radius"))?,
                std: d.std.ok_or_else(|| missing("std"))?,
                embed_dim: d.embed_dim,
                rotation_seed: d.rotation_seed,
            },
            "moons" => DataSource::Moons {
                n: d.n.ok_or_else(|| missing("n"))?,
                noise_std: d.noise_std.ok_or_else(|| missing("noise_std"))?,
            },
            "checkerboard" => DataSource::Checkerboard {
                n: d.n.ok_or_else(|| missing("n"))?,
                grid: d.grid.ok_or_else(|| missing("grid"))?,
            },
            "mnist" => DataSource::Mnist {
                dir: d.dir.ok_or_else(|| missing("dir"))?,
                limit: d.limit,
            },
            _ => DataSource::File {
                path: d.path.ok_or_else(|| missing("path"))?,
            },
        };
        let objective: Objective = f.stage1.objective.parse()?;
        if !matches!(objective, Objective::Ae | Objective::Cwae | Objective::Cw2) {
            return Err(Error::Config(format!(
                "`stage1.objective` must be ae, cwae or cw2, got {}",
                objective.name()
            )));
        }
        let stage = |s: StageSection| StageOptions {
            lr: s.lr,
            batch_size: s.batch_size,
            epochs: s.epochs,
            eval_every: s.eval_every,
            clip_norm: s.clip_norm,
        };
        let g = f.generator;
        let cfg = Self {
            seed: f.seed,
            data: DataSpec {
                preset: d.preset,
                source,
                validation_fraction: d.validation_fraction,
                seed: f.seed,
            },
            arch: Architecture {
                hidden_width: f.model.hidden_width,
                hidden_layers: f.model.hidden_layers,
                generator_width: f.model.generator_width,
                generator_layers: f.model.generator_layers,
            },
            output_activation: f.model.output,
            latent_dim: f.model.latent_dim,
            noise_dim: f.model.noise_dim,
            objective,
            lr: f.stage1.lr,
            lambda: f.stage1.lambda,
            batch_size: f.stage1.batch_size,
            epochs: f.stage1.epochs,
            eval_every: f.stage1.eval_every,
            log_both: f.stage1.log_both,
            clip_norm: f.stage1.clip_norm,
            stage2: stage(f.stage2),
            distance: g.distance,
            generator: stage(StageSection {
                lr: g.lr,
                batch_size: g.batch_size,
                epochs: g.epochs,
                eval_every: g.eval_every,
                clip_norm: g.clip_norm,
            }),
            sw_dirs: g.sw_dirs,
            eval_samples: f.eval.samples,
            coverage_radius: f.eval.coverage_radius,
            out_dir: f.output.dir,
            name: f.output.name,
            record_wall_time: f.output.record_wall_time,
        };
        cfg.stage1_config(2)?;
        cfg.stage2_config(2)?;
        cfg.generator_config(2)?;
        Ok(cfg)
    }

    /// Sets the run seed, which also seeds data generation and the split.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.data.seed = seed;
        self
    }

    fn base(&self, objective: Objective, data_dim: usize, stage: &StageOptions) -> TrainConfig {
        let mut c = TrainConfig::new(objective, data_dim, self.latent_dim, self.noise_dim);
        c.lr = stage.lr;
        c.lambda = self.lambda;
        c.batch_size = stage.batch_size;
        c.epochs = stage.epochs;
        c.seed = self.seed;
        c.sw_num_dirs = self.sw_dirs;
        c.eval_every = stage.eval_every;
        c.eval_samples = self.eval_samples;
        c.log_both = self.log_both;
        c.clip_norm = stage.clip_norm;
        c.record_wall_time = self.record_wall_time;
        c
    }

    pub fn stage1_config(&self, data_dim: usize) -> Result<TrainConfig> {
        let stage = StageOptions {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            eval_every: self.eval_every,
            clip_norm: self.clip_norm,
        };
        let c = self.base(self.objective, data_dim, &stage);
        c.validate()?;
        Ok(c)
    }

    pub fn stage2_config(&self, data_dim: usize) -> Result<TrainConfig> {
        let c = self.base(Objective::Lt, data_dim, &self.stage2);
        c.validate()?;
        Ok(c)
    }

    pub fn generator_config(&self, data_dim: usize) -> Result<TrainConfig> {
        let objective = match self.distance {
            Distance::Cw => Objective::CwGen,
            Distance::Sw => Objective::SwGen,
        };
        let c = self.base(objective, data_dim, &self.generator);
        c.validate()?;
        Ok(c)
    }

    pub fn eval_options(&self, seed: u64) -> EvalOptions {
        EvalOptions {
            samples: self.eval_samples,
            seed,
            coverage_radius: self.coverage_radius,
        }
    }
}

/// Copies every key of `user` over `base`, refusing keys `base` lacks.
fn overlay(base: &mut Table, user: Table) -> Result<()> {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(section)), Value::Table(entries)) => {
                for (k, v) in entries {
                    if !section.contains_key(&k) {
                        return Err(Error::Config(format!("unknown key `{key}.{k}`")));
                    }
                    if matches!(v, Value::Table(_)) {
                        return Err(Error::Config(format!("`{key}.{k}` nests too deeply")));
                    }
                    section.insert(k, v);
                }
            }
            (Some(Value::Table(_)), _) => return Err(Error::Config(format!("`{key}` must be a section"))),
            (Some(slot), v) if !matches!(v, Value::Table(_)) => *slot = v,
            (Some(_), _) => return Err(Error::Config(format!("`{key}` must be a value, not a section"))),
            (None, Value::Table(_)) => return Err(Error::Config(format!("unknown section `[{key}]`"))),
            (None, _) => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
    }
    Ok(())
}

fn text_sets(text: &str, key: &str) -> bool {
    text.parse::<Table>()
        .ok()
        .and_then(|t| t.get("data").and_then(|d| d.get(key)).cloned())
        .is_some()
}
