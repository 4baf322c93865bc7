use std::path::PathBuf;
use std::process::ExitCode;

use beris_lab::{run_path, sweep_path, HarnessError, RunOptions};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "beris-lab",
    version,
    about = "Run nematic flow experiments from JSON configs"
)]
struct Cli {
    /// Output directory, overriding the config's output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for field kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for random initial data, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run { config: PathBuf },
    /// Run an experiment once per value of a numeric config key.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        /// Runs in flight at once.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn report(e: &HarnessError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let opts = RunOptions {
        out: cli.out,
        threads: cli.threads,
        seed: cli.seed,
    };
    match cli.command {
        Command::Run { config } => match run_path(&config, &opts) {
            Ok(o) => {
                if let Some(e) = &o.error {
                    eprintln!("error: {e}");
                }
                println!(
                    "{}",
                    serde_json::to_string_pretty(&o.summary).expect("summary serializes")
                );
                ExitCode::from(o.exit_code as u8)
            }
            Err(e) => report(&e),
        },
        Command::Sweep {
            config,
            param,
            values,
            jobs,
        } => match sweep_path(&config, &param, &values, &opts, jobs) {
            Ok(r) => {
                for row in &r.rows {
                    println!(
                        "{} = {}: {} {:?}",
                        r.param, row.value, row.status, row.headline
                    );
                }
                println!("slope {:?}, trend {}", r.slope, r.trend);
                ExitCode::SUCCESS
            }
            Err(e) => report(&e),
        },
    }
}
