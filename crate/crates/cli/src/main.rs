use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use swbss_cli::{commands, exit_code};

#[derive(Parser)]
#[command(
    name = "swbss",
    version,
    about = "Switching blind source separation with joint dereverberation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a reverberant scene and write its audio and truth files.
    Simulate {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Separate and dereverberate `mix.wav` from a scene directory.
    Enhance {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score estimates against a simulated scene.
    Evaluate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run a grid of configurations over simulated scenes.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { spec, out } => commands::simulate(spec.as_deref(), &out),
        Command::Enhance { input, config, out } => commands::enhance(&input, &config, &out),
        Command::Evaluate { est, truth, report } => commands::evaluate_to_file(&est, &truth, &report).map(|e| {
            println!(
                "mean fwssnr {:.3} dB, mean sir improvement {:.3} dB",
                e.mean_fwssnr(),
                e.mean_sir_improvement()
            );
        }),
        Command::Sweep { grid, out } => commands::sweep(&grid, &out).map(|lines| {
            for l in lines {
                println!("{l}");
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
