//! `bpod`: drives the model-reduction pipeline as reproducible subcommands.
//! Each stage reads the artifacts of earlier stages from the output
//! directory, refuses stale inputs, and stamps everything it writes with a
//! manifest hash. Fixed config and seed reproduce byte-identical outputs.

mod artifact;
mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use artifact::Failure;
use config::PipelineConfig;
use stages::{SimMode, StageContext};

#[derive(Parser)]
#[command(name = "bpod", version, about = "Reduced-order modeling and feedback design pipeline")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults to ./pipeline.toml when
    /// present, else built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Artifact directory shared by all stages.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides the seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for concurrent work items (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Accept upstream artifacts even when stale or unexplained.
    #[arg(long, global = true)]
    force: bool,

    /// Disable added safeguards (for example the Newton line search).
    #[arg(long, global = true)]
    strict: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the steady state of the plant.
    Steady,
    /// Extract the unstable eigenvalues and the bi-orthogonal eigenspace pair.
    Eigs,
    /// Collect primal and adjoint snapshot ensembles around the steady state.
    Snapshots,
    /// Balance the snapshot factors into a reduced model.
    Rom,
    /// Cross-check empirical values against exact dense results on random systems.
    OracleCompare,
    /// Design the state-feedback gain for the reduced model.
    Lqr,
    /// Design the observer gain for the reduced model.
    Lqg,
    /// Run the compensated plant in closed loop.
    Simulate {
        /// Feedback path: exact reduced state or observer estimates.
        #[arg(long, value_enum, default_value_t = ModeArg::Full)]
        mode: ModeArg,
        /// Control switch-on time; repeat for several runs (overrides the
        /// configured list).
        #[arg(long = "turn-on")]
        turn_on: Vec<f64>,
    },
    /// Continue the steady branch over the bifurcation parameter.
    Bifurcation,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    Observer,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut cfg: PipelineConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Failure::config(format!("cannot read config {}: {e}", path.display()))
            })?;
            toml::from_str(&text)
                .map_err(|e| Failure::config(format!("config {}: {e}", path.display())))?
        }
        None => {
            let fallback = PathBuf::from("pipeline.toml");
            if fallback.exists() {
                let text = std::fs::read_to_string(&fallback)?;
                toml::from_str(&text)
                    .map_err(|e| Failure::config(format!("config pipeline.toml: {e}")))?
            } else {
                PipelineConfig::default()
            }
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(Failure::config)?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    if let Some(jobs) = cli.jobs {
        if jobs > 0 && !bpod::par::set_threads(jobs) {
            eprintln!("note: worker pool already initialized; --jobs ignored");
        }
    }
    let ctx = StageContext { cfg: &cfg, out_dir: &cli.out, force: cli.force, strict: cli.strict };
    match &cli.command {
        Command::Steady => stages::steady(&ctx),
        Command::Eigs => stages::eigs(&ctx),
        Command::Snapshots => stages::snapshots(&ctx),
        Command::Rom => stages::rom(&ctx),
        Command::OracleCompare => stages::oracle_compare(&ctx),
        Command::Lqr => stages::lqr(&ctx),
        Command::Lqg => stages::lqg(&ctx),
        Command::Simulate { mode, turn_on } => {
            let mode = match mode {
                ModeArg::Full => SimMode::Full,
                ModeArg::Observer => SimMode::Observer,
            };
            stages::simulate(&ctx, mode, turn_on)
        }
        Command::Bifurcation => stages::bifurcation(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
