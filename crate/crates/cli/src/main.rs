use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use optex_cli::commands::{self, Outcome, SimulateOptions, SweepParam};
use optex_cli::{CliError, Format, Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "optex", version, about = "Optimal extraction with price impact")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides OPTEX_OUT_DIR and the config file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed for Monte Carlo (overrides OPTEX_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Encoding of tabular artifacts.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Critical prices, boundary table and value surface.
    Solve,
    /// Numerical invariants of the solved instance.
    Verify,
    /// Monte Carlo payoff of the configured policy from (x, y).
    Simulate {
        #[arg(allow_negative_numbers = true)]
        x: f64,
        y: f64,
        /// Compare against shifted boundaries and immediate depletion.
        #[arg(long)]
        dominance: bool,
        /// Simulate the associated stopping problem.
        #[arg(long)]
        stopping: bool,
        /// Write sample paths to trace.csv.
        #[arg(long)]
        trace: bool,
    },
    /// Boundaries along one parameter.
    Sweep {
        #[arg(value_enum)]
        param: SweepParam,
        #[arg(required = true, num_args = 2.., allow_negative_numbers = true)]
        values: Vec<f64>,
    },
    /// Finite-difference solution compared with the analytic surface.
    Oracle {
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let flags = Overrides {
        out_dir: cli.out,
        seed: cli.seed,
        format: cli.format,
    };
    cfg.apply_overrides(|k| std::env::var(k).ok(), &flags)?;
    match cli.command {
        Command::Solve => commands::solve(&cfg),
        Command::Verify => commands::verify(&cfg),
        Command::Simulate {
            x,
            y,
            dominance,
            stopping,
            trace,
        } => commands::simulate(
            &cfg,
            x,
            y,
            SimulateOptions {
                dominance,
                stopping,
                trace,
            },
        ),
        Command::Sweep { param, values } => commands::sweep(&cfg, param, &values),
        Command::Oracle { levels } => commands::oracle(&cfg, levels),
    }
}

/// Print the summary; a closed stdout (e.g. piped into `head`) is not an error.
fn report(out: &Outcome) {
    let mut stdout = std::io::stdout().lock();
    let _ = write!(stdout, "{}", out.summary).and_then(|_| {
        out.files
            .iter()
            .try_for_each(|f| writeln!(stdout, "wrote {}", f.display()))
    });
}

fn main() -> ExitCode {
    match run(Cli::parse()).and_then(|out| {
        report(&out);
        out.into_result()
    }) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
