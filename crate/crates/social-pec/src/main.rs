use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use social_pec::commands::{self, PredictOptions};
use social_pec::config::parse_mode;
use social_pec::export::parse_which;
use social_pec::Result;

#[derive(Parser)]
#[command(name = "social-pec", version, about = "Pedestrian trajectory prediction with pattern extraction convolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the non-held-out sets and save the best checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Best-of-K ADE/FDE of a checkpoint on the held-out set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        /// sample or mean
        #[arg(long)]
        mode: Option<String>,
    },
    /// Predict the future of the last observation window of an annotation file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        k: usize,
        /// sample or mean
        #[arg(long, default_value = "sample")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        horizon: usize,
    },
    /// ADE/FDE of constant-velocity extrapolation on the held-out set.
    Baseline {
        #[arg(long)]
        config: PathBuf,
    },
    /// Export the learned motion patterns of one encoder.
    DumpPatterns {
        #[arg(long)]
        checkpoint: PathBuf,
        /// csv or svg
        #[arg(long)]
        format: String,
        /// context or target
        #[arg(long)]
        which: String,
        /// Half-width of the plotted square, in meters.
        #[arg(long, default_value_t = 6.0)]
        extent: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(command: Command) -> Result<String> {
    match command {
        Command::Train { config } => commands::train(&config),
        Command::Eval { checkpoint, config, k, mode } => {
            let mode = mode.as_deref().map(parse_mode).transpose()?;
            commands::eval(&checkpoint, &config, k, mode)
        }
        Command::Predict { checkpoint, input, out, k, mode, seed, horizon } => {
            let opts = PredictOptions { rollouts: k, mode: parse_mode(&mode)?, seed, horizon };
            commands::predict(&checkpoint, &input, &out, opts)
        }
        Command::Baseline { config } => commands::baseline(&config),
        Command::DumpPatterns { checkpoint, format, which, extent, out } => {
            let format = commands::parse_format(&format)?;
            commands::dump_patterns(&checkpoint, format, parse_which(&which)?, extent, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let text = e.to_string();
            eprintln!("{}", text.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let text = e.to_string();
            eprintln!("error: {}", text.lines().next().unwrap_or("unknown failure"));
            ExitCode::FAILURE
        }
    }
}
