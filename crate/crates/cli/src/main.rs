//! `cltlab`: batch front door for the chain analysis library. Loads a model
//! (inline JSON or gallery preset), runs one analysis, and emits CSV or JSON.
//!
//! Exit codes: 0 success, 2 rejected input or undefined operation, 3 budget
//! exceeded, 4 internal invariant violation.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use cltlab_core::gallery::GallerySpec;
use cltlab_core::montecarlo::Centering;
use cltlab_core::ErrorKind;

use config::{env_seed, Format, Mode, ReferenceKind, RunConfig, Statistic};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(std::io::Error),
    Core(cltlab_core::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Io(e) => write!(f, "i/o failure: {e}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<cltlab_core::Error> for CliError {
    fn from(e: cltlab_core::Error) -> Self {
        CliError::Core(e)
    }
}

macro_rules! from_core {
    ($($err:ty),*) => {$(
        impl From<$err> for CliError {
            fn from(e: $err) -> Self {
                CliError::Core(cltlab_core::Error::from(e))
            }
        }
    )*};
}

from_core!(
    cltlab_core::KernelError,
    cltlab_core::MomentsError,
    cltlab_core::BridgeError,
    cltlab_core::MixingError,
    cltlab_core::BlocksError,
    cltlab_core::McError,
    cltlab_core::GalleryError
);

fn exit_code(err: &CliError) -> i32 {
    match err {
        CliError::Config(_) | CliError::Io(_) => 2,
        CliError::Core(e) => match e.kind() {
            ErrorKind::Validation => 2,
            ErrorKind::Budget => 3,
            ErrorKind::Internal => 4,
        },
    }
}

#[derive(Parser)]
#[command(
    name = "cltlab",
    version,
    about = "Exact analyses and seeded experiments for additive functionals of finite Markov chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration; explicit flags override its fields.
    #[arg(long, global = false)]
    config: Option<PathBuf>,
    /// Model JSON file: {"kernel":{"size":S,"rows":[[..]]},"pi":[..],"f":[..]}.
    #[arg(long, conflicts_with = "gallery")]
    model: Option<PathBuf>,
    /// Gallery preset: two_state | iid_rademacher | flip_flop | truncated_renewal.
    #[arg(long)]
    gallery: Option<String>,
    /// two_state jump probability from state 0.
    #[arg(long)]
    a: Option<f64>,
    /// two_state jump probability from state 1.
    #[arg(long)]
    b: Option<f64>,
    /// two_state observable values, e.g. "-1,1".
    #[arg(long, allow_hyphen_values = true)]
    f: Option<String>,
    /// truncated_renewal truncation size.
    #[arg(long = "N")]
    size: Option<u64>,
    /// truncated_renewal log exponent (1 or 2).
    #[arg(long)]
    log_exponent: Option<u32>,
    /// Output table format.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Master seed (flag > CLTLAB_SEED > config > default 1).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replication maps; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Numeric tolerance override (stationary solver, series truncation).
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct HorizonArgs {
    /// Largest horizon n in the profile.
    #[arg(long)]
    max_n: Option<u64>,
}

#[derive(Args)]
struct BridgeArgs {
    /// Bridge horizon n.
    #[arg(long)]
    n: Option<u64>,
    /// Interior index for a single bridge marginal (with --x, --y).
    #[arg(long)]
    k: Option<u64>,
    /// Start state for the marginal.
    #[arg(long)]
    x: Option<usize>,
    /// End state for the marginal.
    #[arg(long)]
    y: Option<usize>,
}

#[derive(Args)]
struct BlocksArgs {
    /// Block length m.
    #[arg(long)]
    m: Option<u64>,
    /// Number of full blocks u.
    #[arg(long)]
    u: Option<u64>,
    /// Sampled path length (defaults to m*u).
    #[arg(long)]
    n: Option<u64>,
    /// Replications for the Monte Carlo orthogonality fallback.
    #[arg(long)]
    reps: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Horizon n of each sampled path.
    #[arg(long)]
    n: Option<u64>,
    /// Number of replications.
    #[arg(long)]
    reps: Option<u64>,
    /// Statistic centering: endpoint | none.
    #[arg(long, value_enum)]
    centering: Option<CenteringArg>,
    /// Which statistic to compute.
    #[arg(long, value_enum)]
    statistic: Option<Statistic>,
    /// exact | mc (abs-mean only).
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Reference law for the goodness-of-fit verdict.
    #[arg(long, value_enum)]
    reference: Option<ReferenceKind>,
    /// Dump per-replication statistics as one-column CSV.
    #[arg(long)]
    raw_out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    max_n: Option<u64>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    reps: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum CenteringArg {
    Endpoint,
    None,
}

impl From<CenteringArg> for Centering {
    fn from(c: CenteringArg) -> Self {
        match c {
            CenteringArg::Endpoint => Centering::Endpoint,
            CenteringArg::None => Centering::None,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate the model: kernel rows, stationarity, centering.
    Validate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Solve and print the stationary law.
    Stationary {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Irreducibility, period, total ergodicity.
    Ergodicity {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Variance profile E(S_n^2)/n and the series variance.
    Moments {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        horizon: HorizonArgs,
    },
    /// Endpoint-conditional mean table, or a single interior marginal.
    Bridge {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        bridge: BridgeArgs,
    },
    /// Mixing profile with per-condition verdicts.
    Conditions {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        horizon: HorizonArgs,
    },
    /// Block decomposition of a sampled path plus identity/orthogonality checks.
    Blocks {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        blocks: BlocksArgs,
    },
    /// Seeded distributional experiments.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        simulate: SimulateArgs,
    },
    /// One-shot dossier with a reproducing config echo.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        report: ReportArgs,
    },
}

fn parse_observable(text: &str) -> Result<[f64; 2], CliError> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(CliError::Config(format!(
            "--f expects two comma-separated values, got {text:?}"
        )));
    }
    let f0 = parts[0]
        .trim()
        .parse::<f64>()
        .map_err(|e| CliError::Config(format!("--f first value {:?}: {e}", parts[0])))?;
    let f1 = parts[1]
        .trim()
        .parse::<f64>()
        .map_err(|e| CliError::Config(format!("--f second value {:?}: {e}", parts[1])))?;
    Ok([f0, f1])
}

fn gallery_from_flags(common: &CommonArgs, name: &str) -> Result<GallerySpec, CliError> {
    match name {
        "two_state" => {
            let a = common
                .a
                .ok_or_else(|| CliError::Config("two_state requires --a".into()))?;
            let b = common
                .b
                .ok_or_else(|| CliError::Config("two_state requires --b".into()))?;
            let f = match &common.f {
                Some(text) => parse_observable(text)?,
                None => [-1.0, 1.0],
            };
            Ok(GallerySpec::TwoState { a, b, f })
        }
        "iid_rademacher" => Ok(GallerySpec::TwoState {
            a: 0.5,
            b: 0.5,
            f: [-1.0, 1.0],
        }),
        "flip_flop" => Ok(GallerySpec::TwoState {
            a: 1.0,
            b: 1.0,
            f: [-1.0, 1.0],
        }),
        "truncated_renewal" => {
            let size = common
                .size
                .ok_or_else(|| CliError::Config("truncated_renewal requires --N".into()))?;
            Ok(GallerySpec::TruncatedRenewal {
                size,
                log_exponent: common.log_exponent.unwrap_or(2),
            })
        }
        other => Err(CliError::Config(format!(
            "unknown gallery preset {other:?}; product and block_diagonal \
             presets are config-file only"
        ))),
    }
}

fn resolve(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(path) = &common.model {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let model = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid model {}: {e}", path.display())))?;
        cfg.model = Some(model);
        cfg.gallery = None;
    }
    if let Some(name) = &common.gallery {
        cfg.gallery = Some(gallery_from_flags(common, name)?);
        cfg.model = None;
    }
    if let Some(f) = common.format {
        cfg.format = Some(f);
    }
    if let Some(o) = &common.output {
        cfg.output = Some(o.clone());
    }
    match (common.seed, env_seed()?) {
        (Some(s), _) => cfg.params.seed = Some(s),
        (None, Some(s)) => cfg.params.seed = Some(s),
        (None, None) => {}
    }
    if let Some(w) = common.workers {
        cfg.params.workers = Some(w);
    }
    if let Some(t) = common.tol {
        cfg.params.tol = Some(t);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { common } => commands::validate(&resolve(&common)?),
        Command::Stationary { common } => commands::stationary(&resolve(&common)?),
        Command::Ergodicity { common } => commands::ergodicity(&resolve(&common)?),
        Command::Moments { common, horizon } => {
            let mut cfg = resolve(&common)?;
            if let Some(v) = horizon.max_n {
                cfg.params.max_n = Some(v);
            }
            commands::moments(&cfg)
        }
        Command::Bridge { common, bridge } => {
            let mut cfg = resolve(&common)?;
            if let Some(v) = bridge.n {
                cfg.params.n = Some(v);
            }
            if let Some(v) = bridge.k {
                cfg.params.k = Some(v);
            }
            if let Some(v) = bridge.x {
                cfg.params.x = Some(v);
            }
            if let Some(v) = bridge.y {
                cfg.params.y = Some(v);
            }
            commands::bridge(&cfg)
        }
        Command::Conditions { common, horizon } => {
            let mut cfg = resolve(&common)?;
            if let Some(v) = horizon.max_n {
                cfg.params.max_n = Some(v);
            }
            commands::conditions(&cfg)
        }
        Command::Blocks { common, blocks } => {
            let mut cfg = resolve(&common)?;
            if let Some(v) = blocks.m {
                cfg.params.m = Some(v);
            }
            if let Some(v) = blocks.u {
                cfg.params.u = Some(v);
            }
            if let Some(v) = blocks.n {
                cfg.params.n = Some(v);
            }
            if let Some(v) = blocks.reps {
                cfg.params.reps = Some(v);
            }
            commands::blocks(&cfg)
        }
        Command::Simulate { common, simulate } => {
            let mut cfg = resolve(&common)?;
            if let Some(v) = simulate.n {
                cfg.params.n = Some(v);
            }
            if let Some(v) = simulate.reps {
                cfg.params.reps = Some(v);
            }
            if let Some(v) = simulate.centering {
                cfg.params.centering = Some(v.into());
            }
            if let Some(v) = simulate.statistic {
                cfg.params.statistic = Some(v);
            }
            if let Some(v) = simulate.mode {
                cfg.params.mode = Some(v);
            }
            if let Some(v) = simulate.reference {
                cfg.params.reference = Some(v);
            }
            if let Some(v) = &simulate.raw_out {
                cfg.raw_output = Some(v.clone());
            }
            commands::simulate(&cfg)
        }
        Command::Report { common, report } => {
            let mut cfg = resolve(&common)?;
            if let Some(v) = report.max_n {
                cfg.params.max_n = Some(v);
            }
            if let Some(v) = report.n {
                cfg.params.n = Some(v);
            }
            if let Some(v) = report.reps {
                cfg.params.reps = Some(v);
            }
            commands::report(&cfg)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
