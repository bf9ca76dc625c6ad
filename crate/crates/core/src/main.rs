use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use glacier_da::cli::{self, Subcommand};

/// Glacier data-assimilation experiments.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// Experiment to run.
    #[arg(value_parser = clap::builder::PossibleValuesParser::new(Subcommand::NAMES))]
    subcommand: String,
    /// Configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Base RNG seed; overrides `[run] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `[run] out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Integration step in years; overrides `[run] dt`.
    #[arg(long)]
    dt: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GLACIER_DA_LOG", "warn")).init();
    let args = Args::parse();
    match cli::run_from_path(&args.subcommand, &args.config, args.seed, args.out.as_deref(), args.dt) {
        Ok(m) => {
            for f in &m.files {
                println!("{} {} {}", f.sha256, f.schema, f.file);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
