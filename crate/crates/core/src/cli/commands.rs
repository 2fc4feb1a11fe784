use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::checkpoint::{Checkpoint, RngSummary, StageRecord};
use super::config::{preset_text, DataSource, DataSpec, Distance, RunConfig, PRESETS};
use super::plot::{self, Layer};
use super::{format_sig9, Command, Failure};
use crate::cwdist::{self, CwConfig};
use crate::datasets::{self, Dataset};
use crate::error::Error;
use crate::eval::{self, EvalOptions, EvalReport, InterpolationMode};
use crate::rng::{self, tag};
use crate::tensor::Tensor;
use crate::training::{self, MetricsRecord, Objective, SamplePath, TrainConfig};

type CmdResult = Result<(), Failure>;

/// Most images written to one PGM grid.
const GRID_LIMIT: usize = 100;
/// Points in SVG scatter plots.
const PLOT_POINTS: usize = 2000;

pub(super) fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::TrainStage1 {
            config,
            objective,
            seed,
            out_dir,
        } => train_stage1(&config, objective, seed, out_dir),
        Command::TrainStage2 { ckpt, config, seed, out } => train_stage2(&ckpt, &config, seed, out),
        Command::TrainGenerator {
            config,
            distance,
            sw_dirs,
            seed,
            out_dir,
        } => train_generator(&config, distance, sw_dirs, seed, out_dir),
        Command::Sample {
            ckpt,
            n,
            path,
            seed,
            out,
        } => sample(&ckpt, n, path, seed, out),
        Command::Interpolate {
            ckpt,
            mode,
            steps,
            seed,
            out,
        } => interpolate(&ckpt, mode, steps, seed, out),
        Command::Eval {
            ckpt,
            data,
            seed,
            samples,
            coverage_radius,
            out,
            label,
        } => evaluate(
            &ckpt,
            &data,
            EvalOptions {
                samples,
                seed,
                coverage_radius,
            },
            out,
            label,
        ),
        Command::Dist {
            a,
            b,
            metric,
            gaussian,
            sw_dirs,
            seed,
            exact,
        } => dist(&a, b.as_deref(), metric, gaussian, sw_dirs, seed, exact),
        Command::Preset { name } => match preset_text(&name) {
            Some(t) => {
                print!("{t}");
                Ok(())
            }
            None => {
                let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                Err(Error::Config(format!("unknown preset `{name}`; expected one of {}", names.join(", "))).into())
            }
        },
    }
}

fn load_run(config: &Path, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let run = RunConfig::load(config)?;
    Ok(match seed {
        Some(s) => run.with_seed(s),
        None => run,
    })
}

/// Data problems exit with code 3 even when they surface as argument errors.
fn load_data(spec: &DataSpec) -> Result<Dataset, Failure> {
    spec.load().map_err(|e| {
        let mut f = Failure::from(e);
        if f.code != 4 {
            f.code = 3;
        }
        f
    })
}

fn image_shape(spec: &DataSpec, dim: usize) -> Option<(usize, usize)> {
    let side = (dim as f64).sqrt().round() as usize;
    (matches!(spec.source, DataSource::Mnist { .. }) && side * side == dim).then_some((side, side))
}

fn ckpt_stem(path: &Path) -> PathBuf {
    let s = path.to_string_lossy();
    PathBuf::from(s.strip_suffix(".ckpt.json").or_else(|| s.strip_suffix(".json")).unwrap_or(&s))
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(Error::from)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Metrics as CSV with a fixed header.
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from("epoch,loss,rec_term,latent_term,frechet_prior,wall_s\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch,
            r.loss,
            opt(r.rec_term),
            opt(r.latent_term),
            opt(r.frechet_prior),
            opt(r.wall_s)
        ));
    }
    s
}

fn head(t: &Tensor, n: usize) -> Result<Tensor, Failure> {
    let idx: Vec<usize> = (0..t.rows().min(n)).collect();
    Ok(t.select_rows(&idx)?)
}

fn stage_record(stage: &str, config: TrainConfig, metrics: Vec<MetricsRecord>) -> StageRecord {
    StageRecord {
        stage: stage.into(),
        rng: RngSummary::new(config.seed),
        config,
        metrics,
    }
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

/// Writes the checkpoint, its metrics, and returns both paths.
fn save_run(stem: &Path, ckpt: &Checkpoint, metrics: &[MetricsRecord]) -> Result<Vec<PathBuf>, Failure> {
    let ckpt_path = with_suffix(stem, ".ckpt.json");
    ckpt.save(&ckpt_path)?;
    let csv_path = with_suffix(stem, ".metrics.csv");
    fs::write(&csv_path, metrics_csv(metrics)).map_err(Error::from)?;
    Ok(vec![ckpt_path, csv_path])
}

/// Writes a scatter of data-space samples (2D data) or an image grid.
fn sample_plots(stem: &Path, spec: &DataSpec, samples: &Tensor, title: &str) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    if samples.cols() == 2 {
        let p = with_suffix(stem, ".svg");
        let pts = head(samples, PLOT_POINTS)?;
        let layer = Layer {
            points: &pts,
            color: "steelblue",
            radius: 1.5,
            path: false,
        };
        plot::write_scatter(&p, title, &[layer])?;
        out.push(p);
    }
    if let Some((h, w)) = image_shape(spec, samples.cols()) {
        let p = with_suffix(stem, ".pgm");
        plot::write_image_grid(&p, &head(samples, GRID_LIMIT)?, h, w)?;
        out.push(p);
    }
    Ok(out)
}

fn train_stage1(config: &Path, objective: Option<Objective>, seed: Option<u64>, out_dir: Option<PathBuf>) -> CmdResult {
    let mut run = load_run(config, seed)?;
    if let Some(o) = objective {
        if !matches!(o, Objective::Ae | Objective::Cwae | Objective::Cw2) {
            return Err(Error::Config(format!("--objective must be ae, cwae or cw2, got {}", o.name())).into());
        }
        run.objective = o;
    }
    let ds = load_data(&run.data)?;
    let cfg = run.stage1_config(ds.dim())?;
    let out = training::train_stage1(&ds, &cfg, &run.arch, run.output_activation)?;
    let dir = out_dir.unwrap_or_else(|| run.out_dir.clone());
    create_dir(&dir)?;
    let stem = dir.join(format!("{}_{}", run.name, cfg.objective.name()));

    let mut ckpt = Checkpoint::new(run.data.clone(), run.arch, run.output_activation, out.bundle);
    ckpt.stages.push(stage_record("stage1", cfg.clone(), out.metrics.clone()));
    let mut written = save_run(&stem, &ckpt, &out.metrics)?;
    if ckpt.model.latent_dim == 2 {
        let codes = ckpt.model.encode(&head(&ds.validation(), PLOT_POINTS)?)?;
        let p = with_suffix(&stem, ".latent.svg");
        let title = format!("{} {}: encoded validation data", run.name, cfg.objective.name());
        plot::write_scatter(
            &p,
            &title,
            &[Layer {
                points: &codes,
                color: "steelblue",
                radius: 1.5,
                path: false,
            }],
        )?;
        written.push(p);
    }
    if image_shape(&run.data, ds.dim()).is_some() {
        let s = training::sample(&ckpt.model, GRID_LIMIT, cfg.seed, SamplePath::Prior)?;
        let title = format!("{} prior samples", run.name);
        written.extend(sample_plots(&with_suffix(&stem, ".samples"), &run.data, &s, &title)?);
    }
    report(&written);
    Ok(())
}

fn train_stage2(ckpt_path: &Path, config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> CmdResult {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let run = load_run(config, seed)?;
    let ds = load_data(&ckpt.data)?;
    let cfg = run.stage2_config(ds.dim())?;
    let outcome = training::train_stage2(&ds, &ckpt.model, &cfg, &run.arch)?;

    let mut next = ckpt.clone();
    next.architecture.generator_width = run.arch.generator_width;
    next.architecture.generator_layers = run.arch.generator_layers;
    next.model = outcome.bundle;
    next.stages.push(stage_record("stage2", cfg.clone(), outcome.metrics.clone()));
    let stem = match out {
        Some(p) => ckpt_stem(&p),
        None => with_suffix(&ckpt_stem(ckpt_path), "_lt"),
    };
    if let Some(parent) = stem.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut written = save_run(&stem, &next, &outcome.metrics)?;
    if next.model.latent_dim == 2 {
        let codes = next.model.encode(&head(&ds.validation(), PLOT_POINTS)?)?;
        let noise = rng::normal_matrix(&mut rng::stream(cfg.seed, tag::SAMPLE), PLOT_POINTS, next.model.noise_dim);
        let moved = next.model.transport(&noise)?;
        let p = with_suffix(&stem, ".transport.svg");
        plot::write_scatter(
            &p,
            "latent space: encoded data (gray), transported noise (red)",
            &[
                Layer {
                    points: &codes,
                    color: "gray",
                    radius: 1.5,
                    path: false,
                },
                Layer {
                    points: &moved,
                    color: "crimson",
                    radius: 1.5,
                    path: false,
                },
            ],
        )?;
        written.push(p);
    }
    report(&written);
    Ok(())
}

fn train_generator(
    config: &Path,
    distance: Option<Distance>,
    sw_dirs: Option<usize>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
) -> CmdResult {
    let mut run = load_run(config, seed)?;
    if let Some(d) = distance {
        run.distance = d;
    }
    if let Some(k) = sw_dirs {
        run.sw_dirs = k;
    }
    let ds = load_data(&run.data)?;
    let cfg = run.generator_config(ds.dim())?;
    let out = training::train_generator(&ds, &cfg, &run.arch, run.output_activation)?;
    let dir = out_dir.unwrap_or_else(|| run.out_dir.clone());
    create_dir(&dir)?;
    let tag = match run.distance {
        Distance::Cw => "cwgen",
        Distance::Sw => "swgen",
    };
    let stem = dir.join(format!("{}_{tag}", run.name));
    let mut ckpt = Checkpoint::new(run.data.clone(), run.arch, run.output_activation, out.bundle);
    ckpt.stages.push(stage_record("generator", cfg.clone(), out.metrics.clone()));
    let mut written = save_run(&stem, &ckpt, &out.metrics)?;
    let n = if ds.dim() == 2 { PLOT_POINTS } else { GRID_LIMIT };
    let s = training::sample(&ckpt.model, n, cfg.seed, SamplePath::Lcw)?;
    let title = format!("{} {tag} samples", run.name);
    written.extend(sample_plots(&with_suffix(&stem, ".samples"), &run.data, &s, &title)?);
    report(&written);
    Ok(())
}

fn sample(ckpt_path: &Path, n: usize, path: SamplePath, seed: u64, out: Option<PathBuf>) -> CmdResult {
    let ckpt = Checkpoint::load(ckpt_path)?;
    if n == 0 {
        return Err(Error::InvalidArgument("--n must be at least 1".into()).into());
    }
    let samples = training::sample(&ckpt.model, n, seed, path)?;
    let label = match path {
        SamplePath::Prior => "prior",
        SamplePath::Lcw => "lcw",
    };
    let file = out.unwrap_or_else(|| with_suffix(&ckpt_stem(ckpt_path), &format!(".{label}.lcwb")));
    if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    datasets::write_lcwb(&file, &samples)?;
    let stem = ckpt_stem(&file.with_extension(""));
    let mut written = vec![file];
    written.extend(sample_plots(&stem, &ckpt.data, &samples, &format!("{label} samples, seed {seed}"))?);
    report(&written);
    Ok(())
}

fn interpolate(ckpt_path: &Path, mode: InterpolationMode, steps: usize, seed: u64, out: Option<PathBuf>) -> CmdResult {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let model = &ckpt.model;
    model.generator()?;
    let ends = rng::normal_matrix(&mut rng::stream(seed, tag::INTERPOLATE), 2, model.noise_dim);
    let path = eval::interpolate(model, ends.row(0), ends.row(1), steps, mode)?;
    let mode_name = match mode {
        InterpolationMode::LinearLatent => "linear",
        InterpolationMode::DensityBased => "density",
    };
    let prefix = out.unwrap_or_else(|| with_suffix(&ckpt_stem(ckpt_path), &format!(".interp_{mode_name}")));
    if let Some(parent) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }

    let codes = match &model.encoder {
        Some(_) => Some(model.encode(&load_data(&ckpt.data)?.train())?),
        None => None,
    };
    let nearest = codes
        .as_ref()
        .map(|c| eval::mean_nearest_distance(&path.latent, c))
        .transpose()?;

    let latent_csv = with_suffix(&prefix, ".latent.csv");
    datasets::write_csv(&latent_csv, &path.latent)?;
    let decoded = with_suffix(&prefix, ".decoded.lcwb");
    datasets::write_lcwb(&decoded, &path.decoded)?;
    let summary = with_suffix(&prefix, ".csv");
    fs::write(
        &summary,
        format!(
            "mode,steps,seed,mean_nearest_distance\n{mode_name},{steps},{seed},{}\n",
            opt(nearest)
        ),
    )
    .map_err(Error::from)?;
    let mut written = vec![latent_csv, decoded, summary];
    if model.latent_dim == 2 {
        let p = with_suffix(&prefix, ".svg");
        let mut layers = Vec::new();
        let shown = codes.as_ref().map(|c| head(c, PLOT_POINTS)).transpose()?;
        if let Some(c) = &shown {
            layers.push(Layer {
                points: c,
                color: "gray",
                radius: 1.0,
                path: false,
            });
        }
        layers.push(Layer {
            points: &path.latent,
            color: "crimson",
            radius: 3.0,
            path: true,
        });
        plot::write_scatter(&p, &format!("{mode_name} interpolation in latent space"), &layers)?;
        written.push(p);
    }
    if let Some((h, w)) = image_shape(&ckpt.data, model.data_dim) {
        let p = with_suffix(&prefix, ".pgm");
        plot::write_image_grid(&p, &head(&path.decoded, GRID_LIMIT)?, h, w)?;
        written.push(p);
    }
    if let Some(d) = nearest {
        println!("mean nearest-latent distance: {}", format_sig9(d));
    }
    report(&written);
    Ok(())
}

const EVAL_HEADER: &str = "label,data,rec_mse,latent_cw2,frechet_prior,frechet_lcw,modes_prior,modes_lcw";

fn eval_row(label: &str, data: &str, r: &EvalReport) -> String {
    let modes = |c: &Option<eval::ModeCoverage>| {
        c.as_ref()
            .map(|c| format!("{}/{}", c.covered(0.01), c.counts.len()))
            .unwrap_or_default()
    };
    format!(
        "{label},{data},{},{},{},{},{},{}",
        opt(r.rec_mse),
        opt(r.latent_cw2),
        opt(r.frechet_prior),
        opt(r.frechet_lcw),
        modes(&r.coverage_prior),
        modes(&r.coverage_lcw)
    )
}

fn evaluate(ckpt_path: &Path, data: &str, opts: EvalOptions, out: Option<PathBuf>, label: Option<String>) -> CmdResult {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let ds = if PRESETS.iter().any(|(n, _)| *n == data) {
        let spec = if ckpt.data.preset == data {
            ckpt.data.clone()
        } else {
            let mut s = RunConfig::preset(data)?.data;
            s.seed = ckpt.data.seed;
            s
        };
        load_data(&spec)?
    } else {
        let points = datasets::read_points(Path::new(data)).map_err(|e| {
            let mut f = Failure::from(e);
            f.code = 3;
            f
        })?;
        let mut ds = Dataset::new(data, points).map_err(|e| Failure { code: 3, message: e.to_string() })?;
        ds.val_idx = std::mem::take(&mut ds.train_idx);
        ds
    };
    let rep = eval::eval_suite(&ckpt.model, &ds, &opts)?;
    let label = label.unwrap_or_else(|| {
        ckpt_path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let row = eval_row(&label.replace(',', ";"), &data.replace(',', ";"), &rep);
    let file = out.unwrap_or_else(|| ckpt_path.with_file_name("eval.csv"));
    let fresh = !file.exists() || fs::metadata(&file).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&file)
        .map_err(Error::from)?;
    if fresh {
        writeln!(f, "{EVAL_HEADER}").map_err(Error::from)?;
    }
    writeln!(f, "{row}").map_err(Error::from)?;
    println!("{EVAL_HEADER}\n{row}");
    report(&[file]);
    Ok(())
}

fn read_points(path: &Path) -> Result<Tensor, Failure> {
    datasets::read_points(path).map_err(|e| {
        let mut f = Failure::from(e);
        if f.code != 4 {
            f.code = 3;
        }
        f
    })
}

/// The value printed by `dist`.
pub fn dist_value(a: &Tensor, b: Option<&Tensor>, metric: Distance, gaussian: bool, sw_dirs: usize, seed: u64) -> Result<f64, Failure> {
    match (metric, gaussian, b) {
        (Distance::Cw, true, _) => Ok(cwdist::cw2_to_gaussian_value(a, &CwConfig::gaussian(a.cols())?)?),
        (_, false, None) => Err(Error::Config("--b is required unless --gaussian is given".into()).into()),
        (Distance::Sw, true, _) => Err(Error::Config("--gaussian is only available for --metric cw".into()).into()),
        (_, false, Some(b)) => {
            if a.cols() != b.cols() {
                return Err(Error::Shape(format!("files have dimensions {} and {}", a.cols(), b.cols())).into());
            }
            if a.rows() != b.rows() {
                return Err(Error::Shape(format!("files have {} and {} points", a.rows(), b.rows())).into());
            }
            match metric {
                Distance::Cw => Ok(cwdist::cw2_two_samples_value(a, b, &CwConfig::pooled(a.cols())?)?),
                Distance::Sw => Ok(cwdist::sliced_wasserstein_value(a, b, sw_dirs, seed)?),
            }
        }
    }
}

fn dist(a: &Path, b: Option<&Path>, metric: Distance, gaussian: bool, sw_dirs: usize, seed: u64, exact: bool) -> CmdResult {
    let ta = read_points(a)?;
    let tb = match (gaussian, b) {
        (false, Some(b)) => Some(read_points(b)?),
        _ => None,
    };
    let v = dist_value(&ta, tb.as_ref(), metric, gaussian, sw_dirs, seed)?;
    if exact {
        println!("{v:?}");
    } else {
        println!("{}", format_sig9(v));
    }
    Ok(())
}
