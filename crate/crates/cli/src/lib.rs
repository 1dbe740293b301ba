//! Command-line front end for the `mfteam` solvers.
//!
//! Every command that takes `--out` writes its result files and a
//! `manifest.json` into that directory. Exit codes: 0 success, 1 I/O or
//! parse failure, 2 invalid input or size cap, 3 failed self-check.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mfteam::measure::DEFAULT_CAP;
use mfteam::{EnvironmentModel, Horizon};
use serde::Serialize;

mod commands;
pub mod manifest;

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "MFTEAM_WORKERS";

const DEFAULT_EPS: f64 = 1e-6;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::new(1, format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<mfteam::Error> for CliError {
    fn from(e: mfteam::Error) -> Self {
        use mfteam::Error::*;
        let code = match e {
            Io { .. } | Parse(_) => 1,
            Invariant(_) => 3,
            _ => 2,
        };
        CliError::new(code, e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "mfteam",
    version,
    about = "Solvers and experiments for mean-field stochastic teams",
    args_conflicts_with_subcommands = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,

    /// Re-run the command recorded in a manifest, writing to `--out`.
    #[arg(long, value_name = "MANIFEST", requires = "out")]
    pub replay: Option<PathBuf>,

    /// Output directory for `--replay`.
    #[arg(long, requires = "replay")]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(untagged)]
pub enum Command {
    /// Solve the lifted N-agent problem exactly.
    SolveN(SolveNArgs),
    /// Solve the quantized mean-field problem.
    SolveMf(SolveMfArgs),
    /// Monte Carlo rollouts of the N-agent team.
    Simulate(SimulateArgs),
    /// Optimality gap of the mean-field policy for several N.
    GapTable(GapTableArgs),
    /// Reproduce the two-agent counterexample.
    Counterexample(CounterexampleArgs),
    /// Deterministic mean-field trajectory under a policy file.
    Flow(FlowArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SolveN(_) => "solve-n",
            Command::SolveMf(_) => "solve-mf",
            Command::Simulate(_) => "simulate",
            Command::GapTable(_) => "gap-table",
            Command::Counterexample(_) => "counterexample",
            Command::Flow(_) => "flow",
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct HorizonArgs {
    /// Finite horizon length; omit for the infinite discounted horizon.
    #[arg(long, value_name = "T", value_parser = clap::value_parser!(u64).range(1..))]
    pub horizon: Option<u64>,
    /// Discount factor (defaults to the model's).
    #[arg(long)]
    pub discount: Option<f64>,
    /// Accuracy for infinite-horizon solves; truncation error when simulating.
    #[arg(long)]
    pub eps: Option<f64>,
}

impl HorizonArgs {
    pub fn resolve(&self, model: &EnvironmentModel) -> Result<Horizon, CliError> {
        let discount = self.discount.unwrap_or(model.discount());
        let h = match self.horizon {
            Some(steps) => Horizon::Finite {
                steps: steps as usize,
                discount,
            },
            None => Horizon::Discounted {
                discount,
                tolerance: self.eps.unwrap_or(DEFAULT_EPS),
            },
        };
        h.validate()?;
        Ok(h)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct SolveNArgs {
    /// Model JSON file, or `bundled:<name>`.
    #[arg(long)]
    pub model: String,
    /// Population size.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub n: u32,
    #[command(flatten)]
    pub horizon: HorizonArgs,
    /// Largest number of lifted state-action pairs to build.
    #[arg(long, default_value_t = DEFAULT_CAP)]
    pub cap: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SolveMfArgs {
    #[arg(long)]
    pub model: String,
    #[command(flatten)]
    pub horizon: HorizonArgs,
    /// State-simplex grid mesh m (points are multiples of 1/m).
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    pub mesh: u32,
    /// Action-distribution grid mesh.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    pub policy_mesh: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyChoice {
    /// Lifted optimum, realized exchangeably.
    Lifted,
    /// Optimal quantized mean-field policy, deployed symmetrically.
    Mf,
    /// Uniform actions.
    Uniform,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub n: u32,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub replications: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub horizon: HorizonArgs,
    #[arg(long, value_enum, default_value_t = PolicyChoice::Lifted, conflicts_with = "policy_file")]
    pub policy: PolicyChoice,
    /// Policy kernel CSV as written by `solve-mf`.
    #[arg(long)]
    pub policy_file: Option<PathBuf>,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    pub mesh: u32,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    pub policy_mesh: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct GapTableArgs {
    #[arg(long)]
    pub model: String,
    /// Comma-separated population sizes.
    #[arg(long = "n", value_delimiter = ',', required = true, value_parser = clap::value_parser!(u32).range(1..))]
    pub populations: Vec<u32>,
    #[command(flatten)]
    pub horizon: HorizonArgs,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    pub mesh: u32,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    pub policy_mesh: u32,
    #[arg(long, default_value_t = DEFAULT_CAP)]
    pub cap: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct CounterexampleArgs {
    /// Also report the symmetric optimum over kernels of this mesh.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub mesh_u: Option<u32>,
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct FlowArgs {
    #[arg(long)]
    pub model: String,
    /// Policy kernel CSV as written by `solve-mf`.
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long)]
    pub steps: usize,
    /// Initial distribution (defaults to the model's).
    #[arg(long, value_delimiter = ',')]
    pub mu0: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command line. `raw_args` excludes the program name and is
/// recorded in the manifest.
pub fn run(cli: Cli, raw_args: Vec<String>) -> Result<(), CliError> {
    if let Some(path) = cli.replay {
        let out = cli.out.expect("clap enforces --out with --replay");
        return replay(&path, &out);
    }
    let Some(command) = cli.command else {
        return Err(CliError::new(2, "no command given; see --help"));
    };
    commands::dispatch(command, raw_args)
}

/// Re-executes the command line stored in a manifest with a new output
/// directory, after checking that the input files are unchanged.
pub fn replay(manifest_path: &Path, out: &Path) -> Result<(), CliError> {
    let recorded = manifest::read_manifest(manifest_path)?;
    for input in &recorded.inputs {
        let current = commands::hash_input(&input.path)?;
        if current.sha256 != input.sha256 {
            return Err(CliError::new(1, format!("{} changed since the recorded run", input.path)));
        }
    }
    let args = manifest::with_out_dir(&recorded.args, out);
    let cli = Cli::try_parse_from(std::iter::once("mfteam".to_string()).chain(args.iter().cloned()))
        .map_err(|e| CliError::new(2, format!("recorded arguments no longer parse: {e}")))?;
    if cli.replay.is_some() {
        return Err(CliError::new(2, "a manifest cannot record another replay"));
    }
    run(cli, args)
}
