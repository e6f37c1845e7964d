//! The `bwgan` command-line interface.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or configuration
//! error, 3 numerical divergence during training.

pub mod config;
pub mod formats;

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::bwgan::{heuristics, TrainMetrics, Trainer};
use crate::checkpoint::Checkpoint;
use crate::datasets::Dataset;
use crate::error::Error;
use crate::spaces::{Geometry, Measure, SpaceSpec};
use crate::transport::{kantorovich_gap, wasserstein_p_exact};
use crate::verify::{run_suite, Suite, VerifyConfig};

use config::{Family, RunConfigFile, SpaceSection};
use formats::{fmt_sig12, parse_measure, parse_shape, parse_signal, write_metrics_csv};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFY_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "bwgan",
    version,
    about = "Wasserstein GANs with gradient penalties in Banach spaces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the norm and dual norm of a signal file.
    Norm {
        input: PathBuf,
        #[command(flatten)]
        space: SpaceArgs,
        /// Signal layout as CxHxW; flat when omitted.
        #[arg(long)]
        shape: Option<String>,
    },
    /// Estimate λ = E‖X‖ and γ = E‖X‖_* on a synthetic dataset.
    Heuristics {
        #[arg(long, value_enum, default_value = "uniform-cube")]
        dataset: DatasetArg,
        /// Dimension of the uniform cube.
        #[arg(long, default_value_t = 3072)]
        dim: usize,
        #[arg(long, default_value_t = 1024)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        space: SpaceArgs,
    },
    /// Train a generator and critic from a JSON config.
    Train {
        config: PathBuf,
        /// Overrides output.directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Exact Wasserstein distance between two measure files.
    Wasserstein {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        space: SpaceArgs,
        /// Transport exponent.
        #[arg(long = "wp", default_value_t = 1.0)]
        wp: f64,
        #[arg(long)]
        shape: Option<String>,
        /// Critic checkpoint whose Kantorovich estimate is compared to W₁.
        #[arg(long)]
        check_dual: Option<PathBuf>,
        /// Critic scale: the estimate is (E_a D − E_b D)/γ.
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
    },
    /// Run the built-in property suites.
    Verify {
        /// Optional JSON file with suite sizes.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run only these suites (repeatable).
        #[arg(long = "suite", value_parser = parse_suite)]
        suites: Vec<Suite>,
        /// Inflate every analytic dual norm by this relative amount.
        #[arg(long)]
        perturb_dual_norm: Option<f64>,
    },
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DatasetArg {
    EightGaussians,
    SwissRoll,
    Rectangles,
    UniformCube,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FamilyArg {
    Lp,
    Sobolev,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MeasureArg {
    Counting,
    Normalized,
}

#[derive(Debug, Clone, Args)]
pub struct SpaceArgs {
    #[arg(long, value_enum, default_value = "lp")]
    pub space: FamilyArg,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// Sobolev smoothness.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub s: f64,
    #[arg(long, default_value_t = crate::spaces::DEFAULT_FREQUENCY_SCALE)]
    pub frequency_scale: f64,
    #[arg(long, value_enum, default_value = "counting")]
    pub measure: MeasureArg,
}

impl SpaceArgs {
    fn to_space(&self) -> crate::Result<SpaceSpec> {
        SpaceSection {
            family: match self.space {
                FamilyArg::Lp => Family::Lp,
                FamilyArg::Sobolev => Family::Sobolev,
            },
            p: self.p,
            s: self.s,
            frequency_scale: self.frequency_scale,
            measure: match self.measure {
                MeasureArg::Counting => Measure::Counting,
                MeasureArg::Normalized => Measure::Normalized,
            },
        }
        .to_space()
    }
}

/// A failed command with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn usage(e: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: e.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Divergence { .. } => EXIT_DIVERGED,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::usage(e)
    }
}

type CmdResult = Result<u8, Failure>;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn shape_arg(shape: &Option<String>) -> Result<Option<Geometry>, Failure> {
    shape.as_deref().map(parse_shape).transpose().map_err(Failure::from)
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    match command {
        Command::Norm { input, space, shape } => {
            let space = space.to_space()?;
            let x = parse_signal(&read_text(&input)?, shape_arg(&shape)?)?;
            let n = space.norm(&x)?;
            let d = space.dual_norm(&x)?;
            writeln!(out, "norm={n:.12} dual={d:.12}")?;
            Ok(EXIT_OK)
        }
        Command::Heuristics {
            dataset,
            dim,
            samples,
            seed,
            space,
        } => {
            if samples == 0 {
                return Err(Failure::usage("--samples must be positive"));
            }
            let space = space.to_space()?;
            let dataset = match dataset {
                DatasetArg::EightGaussians => Dataset::EightGaussians,
                DatasetArg::SwissRoll => Dataset::SwissRoll,
                DatasetArg::Rectangles => Dataset::Rectangles,
                DatasetArg::UniformCube => Dataset::UniformCube { dim },
            };
            dataset.validate()?;
            space.validate(dataset.geometry())?;
            let sample = dataset.sample(samples, &mut ChaCha8Rng::seed_from_u64(seed));
            let h = heuristics(&sample, &space)?;
            writeln!(
                out,
                "lambda={} gamma={} samples={} lambda_stderr={} gamma_stderr={}",
                fmt_sig12(h.lambda),
                fmt_sig12(h.gamma),
                h.samples,
                fmt_sig12(h.lambda_stderr),
                fmt_sig12(h.gamma_stderr)
            )?;
            Ok(EXIT_OK)
        }
        Command::Train { config, output } => cmd_train(&config, output, out, err),
        Command::Wasserstein {
            a,
            b,
            space,
            wp,
            shape,
            check_dual,
            gamma,
        } => {
            let space = space.to_space()?;
            let shape = shape_arg(&shape)?;
            let mu = parse_measure(&read_text(&a)?, shape)?;
            let nu = parse_measure(&read_text(&b)?, shape)?;
            let sol = wasserstein_p_exact(&mu, &nu, &space, wp)?;
            writeln!(out, "w_p={}", fmt_sig12(sol.distance))?;
            if let Some(path) = check_dual {
                if !(gamma > 0.0) {
                    return Err(Failure::usage("--gamma must be positive"));
                }
                let critic = Checkpoint::load(&path)?.critic()?.scaled(1.0 / gamma);
                let gap = kantorovich_gap(&critic, &mu, &nu, &space)?;
                let w1 = wasserstein_p_exact(&mu, &nu, &space, 1.0)?.distance;
                writeln!(
                    out,
                    "w1={} dual_estimate={} gap={}",
                    fmt_sig12(w1),
                    fmt_sig12(w1 - gap),
                    fmt_sig12(gap)
                )?;
            }
            Ok(EXIT_OK)
        }
        Command::Verify {
            config,
            suites,
            perturb_dual_norm,
        } => {
            let mut cfg = match config {
                Some(path) => serde_json::from_str::<VerifyConfig>(&read_text(&path)?).map_err(Failure::usage)?,
                None => VerifyConfig::default(),
            };
            if let Some(p) = perturb_dual_norm {
                cfg.perturb_dual_norm = p;
            }
            let suites = if suites.is_empty() { Suite::ALL.to_vec() } else { suites };
            let mut all_ok = true;
            for suite in suites {
                let report = run_suite(suite, &cfg)?;
                all_ok &= report.ok();
                writeln!(out, "{report}")?;
            }
            Ok(if all_ok { EXIT_OK } else { EXIT_VERIFY_FAILED })
        }
    }
    .inspect_err(|_| {
        let _ = err.flush();
    })
}

fn write_outputs(
    dir: &Path,
    metrics: &TrainMetrics,
    log_every: usize,
    extra: serde_json::Value,
) -> Result<(), Failure> {
    let csv = fs::File::create(dir.join("metrics.csv"))?;
    write_metrics_csv(BufWriter::new(csv), &metrics.records, log_every)?;
    let n = metrics.records.len().max(1) as f64;
    let mut summary = json!({
        "iterations": metrics.records.len(),
        "lambda": metrics.lambda,
        "gamma": metrics.gamma,
        "penalty_variance_mean": metrics.records.iter().map(|r| r.penalty_variance).sum::<f64>() / n,
        "final_exact_w1": metrics.w1_series().last().map(|p| p.1),
        "wall_time_seconds": metrics.wall_time.last().copied().unwrap_or(0.0),
    });
    if let Some(h) = metrics.heuristics {
        summary["heuristics"] = json!({
            "samples": h.samples,
            "lambda": h.lambda,
            "lambda_stderr": h.lambda_stderr,
            "gamma": h.gamma,
            "gamma_stderr": h.gamma_stderr,
        });
    }
    if let (Some(obj), serde_json::Value::Object(more)) = (summary.as_object_mut(), extra) {
        obj.extend(more);
    }
    let text = serde_json::to_string_pretty(&summary).map_err(Failure::usage)?;
    fs::write(dir.join("summary.json"), text + "\n")?;
    Ok(())
}

fn cmd_train(config: &Path, output: Option<PathBuf>, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let file = RunConfigFile::parse(&read_text(config)?)?;
    let train_config = file.train_config()?;
    let dir = output.unwrap_or_else(|| file.output.directory.clone());
    fs::create_dir_all(&dir)?;
    let log_every = file.output.log_every;
    let activation = train_config.activation;
    let mut trainer = Trainer::new(train_config)?;
    while !trainer.is_finished() {
        if let Err(e) = trainer.step() {
            if let Error::Divergence { iteration, metrics } = &e {
                write_outputs(&dir, metrics, log_every, json!({ "diverged_at": iteration }))?;
            }
            let _ = writeln!(err, "training stopped");
            return Err(e.into());
        }
    }
    let result = trainer.finish();
    write_outputs(&dir, &result.metrics, log_every, json!({}))?;
    Checkpoint::new(activation, result.generator.params().to_vec()).save(dir.join("generator.bwgn"))?;
    Checkpoint::new(activation, result.critic.params().to_vec()).save(dir.join("critic.bwgn"))?;
    writeln!(
        out,
        "trained {} iterations; outputs in {}",
        result.metrics.records.len(),
        dir.display()
    )?;
    Ok(EXIT_OK)
}
