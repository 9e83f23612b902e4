use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rpf::config::RunConfig;
use rpf::{commands, RpfError};

/// Temporal recommendation from recurrent Poisson factorization models:
/// simulate, fit, recommend, predict, evaluate, diagnose.
#[derive(Parser)]
#[command(name = "rpf", version, disable_help_subcommand = true)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    output: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic event history from the configured model.
    Simulate,
    /// Fit the model to an event log by variational inference.
    Fit,
    /// Rank items for a user at a given time.
    Recommend {
        /// Raw user id as it appears in the event data.
        #[arg(long)]
        user: String,
        /// Recommendation time (default: end of the observation window).
        #[arg(long)]
        time: Option<f64>,
        /// List length.
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
    /// Predict the expected time of a user's next event.
    PredictReturn {
        #[arg(long)]
        user: String,
        /// Prediction start time (default: end of the observation window).
        #[arg(long)]
        time: Option<f64>,
    },
    /// Temporal holdout evaluation: ranking, returning time, goodness of fit.
    Evaluate,
    /// Time-change QQ data, similarity matrices, and intensity timelines.
    Diagnose,
}

fn run(cli: &Cli) -> rpf::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| RpfError::Config(format!("cannot size the thread pool: {e}")))?;
    }
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| RpfError::Config("--config <FILE> is required".into()))?;
    let cfg = RunConfig::load(config_path)?;
    let out = &cli.output;
    match &cli.command {
        Command::Simulate => commands::cmd_simulate(&cfg, out, cli.seed),
        Command::Fit => commands::cmd_fit(&cfg, out, cli.seed),
        Command::Recommend { user, time, top_k } => {
            commands::cmd_recommend(&cfg, out, user, *time, *top_k)
        }
        Command::PredictReturn { user, time } => {
            commands::cmd_predict_return(&cfg, out, user, *time, cli.seed)
        }
        Command::Evaluate => commands::cmd_evaluate(&cfg, out, cli.seed),
        Command::Diagnose => commands::cmd_diagnose(&cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successful exits; everything else
            // is a usage error.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RpfError::Config(msg)) if msg.contains("--config") => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
