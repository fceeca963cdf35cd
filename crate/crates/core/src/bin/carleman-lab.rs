use std::path::PathBuf;
use std::process::ExitCode;

use carleman_lab::cli::{run_from_path, Command, RunOptions};
use clap::Parser;

/// Carleman-weight estimate verification and conductivity reconstruction for the heat equation.
#[derive(Debug, Parser)]
#[command(name = "carleman-lab", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Also write SVG line plots.
    #[arg(long)]
    plot: bool,
    /// Worker threads for the parallel sweeps.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory, overriding the configured one.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let options = RunOptions {
        plot: args.plot,
        out: args.out,
    };
    match run_from_path(args.command, &args.config, &options, args.jobs) {
        Ok(output) => {
            for line in &output.summary {
                println!("{line}");
            }
            for file in &output.files {
                println!("wrote {}", file.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
