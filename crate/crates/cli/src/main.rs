//! `lisa`: parse, abstract, check, emit and run agent programs.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lisa::abstraction::{BuildError, KindRequest, DEFAULT_MAX_STATES};
use lisa::pctl::CheckError;
use lisa::runtime::{Future, RuntimeError};

use output::{Format, Out};

#[derive(Debug, Parser)]
#[command(name = "lisa", version, about = "Verify and run BDI agent programs")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Emit line-delimited JSON records instead of prose.
    #[arg(long, global = true)]
    pub machine: bool,
    /// Seed for the environment and the random selection policy.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Abort model construction beyond this many states.
    #[arg(long, global = true, default_value_t = DEFAULT_MAX_STATES)]
    pub max_states: usize,
    /// Convergence threshold for value iteration.
    #[arg(long, global = true, default_value_t = 1e-6)]
    pub epsilon: f64,
    /// Give up value iteration after this many sweeps.
    #[arg(long, global = true, default_value_t = 1_000_000)]
    pub max_iterations: usize,
    /// Worker threads for model construction and checking.
    #[arg(long, global = true, env = "LISA_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Auto,
    Dtmc,
    Mdp,
    /// DTMC under first-declared plan selection.
    Determinized,
}

#[derive(Debug, Args)]
pub struct KindOpts {
    /// Model type to build.
    #[arg(long, value_enum, default_value_t = KindArg::Auto)]
    pub kind: KindArg,
    /// Build an MDP even for DTMC-eligible programs (same as `--kind mdp`).
    #[arg(long, conflicts_with = "kind")]
    pub force_mdp: bool,
}

impl KindOpts {
    pub fn request(&self) -> KindRequest {
        if self.force_mdp {
            return KindRequest::Mdp;
        }
        match self.kind {
            KindArg::Auto => KindRequest::Auto,
            KindArg::Dtmc => KindRequest::Dtmc,
            KindArg::Mdp => KindRequest::Mdp,
            KindArg::Determinized => KindRequest::Determinized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Policy {
    First,
    Random,
    Verified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FutureArg {
    Optimistic,
    Pessimistic,
}

impl From<FutureArg> for Future {
    fn from(f: FutureArg) -> Self {
        match f {
            FutureArg::Optimistic => Future::Optimistic,
            FutureArg::Pessimistic => Future::Pessimistic,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a program; print diagnostics and a summary.
    Parse { file: PathBuf },
    /// Build the probabilistic model of a program.
    Build {
        file: PathBuf,
        #[command(flatten)]
        kind: KindOpts,
        /// Write the explicit model to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check PCTL queries against a program or a model file.
    Check {
        /// A `.lisa` program or a model file written by `build --out`.
        #[arg(long)]
        model: PathBuf,
        /// Query to check; may be repeated.
        #[arg(long = "query", required = true)]
        queries: Vec<String>,
        /// Check from this state (`#12` or `var=1 & other=0`) instead of the initial one.
        #[arg(long)]
        from: Option<String>,
        #[command(flatten)]
        kind: KindOpts,
    },
    /// Translate a program into a PRISM model.
    #[command(visible_alias = "emit")]
    EmitPrism {
        file: PathBuf,
        #[command(flatten)]
        kind: KindOpts,
        /// Write the model here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Property to render into the properties file; may be repeated.
        #[arg(long = "query")]
        queries: Vec<String>,
        /// Properties file; defaults to the `--out` path with a `.props` extension.
        #[arg(long)]
        props: Option<PathBuf>,
    },
    /// Run the reasoning cycle against the simulated environment.
    Simulate {
        file: PathBuf,
        #[arg(long, default_value_t = 100)]
        cycles: u64,
        #[arg(long, value_enum, default_value_t = Policy::First)]
        policy: Policy,
        /// Objective for `--policy verified` when the program declares none.
        #[arg(long)]
        objective: Option<String>,
        /// Minimize the objective given with `--objective`.
        #[arg(long, requires = "objective")]
        minimize: bool,
        /// How later choices are resolved when scoring candidates.
        #[arg(long, value_enum, default_value_t = FutureArg::Optimistic)]
        future: FutureArg,
    },
    /// Rank the plans contending at one model state by an objective.
    SelectPlan {
        /// A `.lisa` program or a model file written by `build --out`.
        #[arg(long)]
        model: PathBuf,
        /// State to select at (`#12` or `var=1 & other=0`).
        #[arg(long)]
        state: String,
        /// Query to optimize; defaults to the program's `select` declaration.
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        minimize: bool,
        #[arg(long, value_enum, default_value_t = FutureArg::Optimistic)]
        future: FutureArg,
        /// Candidate plan numbers; defaults to the plans contending at the state.
        #[arg(long, value_delimiter = ',')]
        plans: Vec<usize>,
    },
}

/// Failure classes mapped to exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("{0}")]
    Resource(String),
    #[error("{0}")]
    Numeric(String),
    /// Already shown to the user; carries the exit code of the original error.
    #[error("{1}")]
    Reported(u8, String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Resource(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Reported(code, _) => *code,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "resource",
            3 => "numeric",
            _ => "user",
        }
    }

    /// Marks the error as already shown in human output.
    pub fn reported(self) -> Self {
        let code = self.exit_code();
        match self {
            CliError::User(m) | CliError::Resource(m) | CliError::Numeric(m) => CliError::Reported(code, m),
            r => r,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        match e {
            BuildError::StateExplosion { .. } | BuildError::DepthExceeded(_) => CliError::Resource(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<CheckError> for CliError {
    fn from(e: CheckError) -> Self {
        match e {
            CheckError::NoConvergence { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<RuntimeError> for CliError {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::Check(c) => c.into(),
            _ => CliError::User(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let format = if cli.global.machine { Format::Machine } else { Format::Human };
    let mut out = Out::new(format);
    match commands::run(&cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            if out.machine() {
                let _ = out.record(
                    "error",
                    serde_json::json!({"kind": e.kind(), "exit_code": code, "message": e.to_string()}),
                );
            } else if !matches!(e, CliError::Reported(..)) {
                eprintln!("error: {e}");
            }
            ExitCode::from(code)
        }
    }
}
