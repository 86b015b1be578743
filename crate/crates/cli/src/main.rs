mod commands;
mod config;
mod error;
mod numfmt;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::FitFlags;

#[derive(Parser, Debug)]
#[command(name = "opffr", version, about = "Penalized function-on-function regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to paired predictor and response curve tables.
    Fit {
        /// Predictor curves (`curve_id,arg,value`).
        #[arg(long)]
        x: PathBuf,
        /// Response curves with the same ids.
        #[arg(long)]
        y: PathBuf,
        /// Model JSON to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: FitFlags,
    },
    /// Predict response trajectories for new predictor curves.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        x: PathBuf,
        /// Output CSV (standard output when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Size of the uniform output grid on the response axis.
        #[arg(long, default_value_t = 101)]
        t_grid: usize,
    },
    /// Write the GCV score over the λ grid.
    Gcv {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        flags: FitFlags,
    },
    /// Run replicated simulation experiments.
    Simulate(commands::SimulateArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit { x, y, out, flags } => commands::fit(&x, &y, &out, &flags),
        Command::Predict { model, x, out, t_grid } => {
            commands::predict(&model, &x, out.as_deref(), t_grid)
        }
        Command::Gcv { x, y, out, flags } => commands::gcv(&x, &y, out.as_deref(), &flags),
        Command::Simulate(args) => commands::simulate(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("opffr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
