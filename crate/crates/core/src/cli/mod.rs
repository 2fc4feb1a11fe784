//! The `lcw` command-line driver.
//!
//! Exit codes: 0 on success, 2 for configuration and usage errors, 3 for
//! unreadable or malformed data, 4 for dimension mismatches and missing
//! networks, 1 for anything else.

pub mod checkpoint;
mod commands;
pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Error;
use crate::eval::InterpolationMode;
use crate::training::{Objective, SamplePath};
use config::Distance;

#[derive(Parser, Debug)]
#[command(name = "lcw", version, about = "Cramer-Wold autoencoders and latent generators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train an encoder and decoder (stage one).
    TrainStage1 {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `stage1.objective`: ae, cwae or cw2.
        #[arg(long)]
        objective: Option<Objective>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output.dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Fit a latent generator to a trained autoencoder (stage two).
    TrainStage2 {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint to write; defaults to `<input stem>_lt.ckpt.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a direct noise-to-data generator.
    TrainGenerator {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `generator.distance`.
        #[arg(long)]
        distance: Option<Distance>,
        /// Overrides `generator.sw_dirs`.
        #[arg(long)]
        sw_dirs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Draw samples from a checkpoint.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "lcw")]
        path: SamplePath,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Raw binary output; defaults to `<ckpt stem>.<path>.lcwb`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Interpolate between two generated points.
    Interpolate {
        #[arg(long)]
        ckpt: PathBuf,
        /// linear or density.
        #[arg(long)]
        mode: InterpolationMode,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output prefix; defaults to `<ckpt stem>.interp_<mode>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and append a row to a CSV file.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// A preset name or a point file (.csv or raw binary).
        #[arg(long)]
        data: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 1.0)]
        coverage_radius: f64,
        /// Defaults to `eval.csv` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Row label; defaults to the checkpoint file name.
        #[arg(long)]
        label: Option<String>,
    },
    /// Distance between two point files.
    Dist {
        #[arg(long)]
        a: PathBuf,
        #[arg(long, required_unless_present = "gaussian")]
        b: Option<PathBuf>,
        /// cw or sw.
        #[arg(long, default_value = "cw")]
        metric: Distance,
        /// Distance of `a` to the standard Gaussian (cw only).
        #[arg(long)]
        gaussian: bool,
        #[arg(long, default_value_t = 1000)]
        sw_dirs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the shortest exact representation instead of 9 significant digits.
        #[arg(long)]
        exact: bool,
    },
    /// Print a built-in configuration template.
    Preset { name: String },
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Format(_) | Error::Length(_) | Error::Io(_) | Error::Json(_) => 3,
            Error::Shape(_) | Error::Incompatible(_) | Error::MissingNetwork(_) => 4,
            Error::Domain(_) => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code. Errors go to standard error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match configure_threads().and_then(|_| commands::run(cli.command)) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// Caps the worker pool at `LCW_THREADS` when set.
fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("LCW_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::from(Error::Config(format!("LCW_THREADS must be a positive integer, got `{v}`"))))?;
    // a pool that already exists keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// `v` with 9 significant digits; zero prints as `0.000000000`.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0.000000000".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        let s = format!("{v:.decimals$}");
        // rounding can carry into a new leading digit
        let digits = s.chars().filter(|c| c.is_ascii_digit()).skip_while(|&c| c == '0').count();
        if digits > 9 && decimals > 0 {
            return format!("{v:.prec$}", prec = decimals - 1);
        }
        s
    } else {
        format!("{v:.8e}")
    }
}
