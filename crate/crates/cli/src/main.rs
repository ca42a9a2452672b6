use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use np2m2_cli::runner::{parse_values, worker_count};
use np2m2_cli::{report, run_plan, CliError, ExperimentConfig, Plan, SweepParam};

#[derive(Parser)]
#[command(name = "np2m2", version, about = "Run performative-prediction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured trial.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the config once per value of one parameter.
    Sweep {
        config: PathBuf,
        /// `alpha` or `d`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild the summary of a finished run and check it against the traces.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config, out } => {
            let config = ExperimentConfig::load(&config)?;
            execute(Plan::run(config), out)
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            let param: SweepParam = param.parse()?;
            let values = parse_values(&values)?;
            let config = ExperimentConfig::load(&config)?;
            execute(Plan::sweep(config, param, values)?, out)
        }
        Command::Report { dir } => {
            let audit = report::audit(&dir)?;
            print!("{}", audit.summary_csv);
            eprintln!("{} traces, {} cells verified", audit.traces, audit.cells);
            Ok(())
        }
    }
}

fn execute(plan: Plan, out: Option<PathBuf>) -> Result<(), CliError> {
    let workers = worker_count()?;
    let out = out.unwrap_or_else(|| plan.config.output_dir.clone());
    let outcome = run_plan(&plan, &out, workers)?;
    print!("{}", outcome.summary_csv);
    eprintln!("{} traces written to {}", outcome.traces.len(), out.display());
    Ok(())
}
