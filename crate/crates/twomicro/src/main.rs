use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use twomicro::config::{schema_help, ExperimentConfig};
use twomicro::runner::run_to_dir;

#[derive(Parser)]
#[command(
    name = "twomicro",
    about = "Second-microlocal calculus laboratory on the torus",
    long_about = "Runs calculus-order sweeps, wavefront scans, and integrable-model \
                  experiments from a JSON config. Reports land in --out as report.json \
                  plus CSV sweep data (columns: experiment,h,value; wavefront heat maps \
                  as x_cell;.. , angle_cell, slope, flags).\n\nExit codes: 0 pass, \
                  2 config error, 3 resource cap, 4 numeric failure, 5 tolerance failure."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config file.
    Run {
        /// Path to the experiment config (JSON).
        config: PathBuf,
        /// Output directory for report.json and CSV data.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads (defaults to the config value or all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Seed for power-iteration start vectors and random probes.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print experiment names and the config schema.
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            print!("{}", schema_help());
            ExitCode::SUCCESS
        }
        Command::Run { config, out, threads, seed } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", config.display());
                    return ExitCode::from(2);
                }
            };
            let mut cfg = match ExperimentConfig::from_json(&text) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = threads {
                cfg.threads = Some(t);
            }
            let out_dir = cfg.out_dir.clone().map(PathBuf::from).unwrap_or(out);
            let execute = || run_to_dir(&cfg, &out_dir);
            let result = match cfg.threads {
                Some(t) => {
                    let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build();
                    match pool {
                        Ok(p) => p.install(execute),
                        Err(e) => {
                            eprintln!("error: thread pool: {e}");
                            return ExitCode::from(4);
                        }
                    }
                }
                None => execute(),
            };
            match result {
                Ok(bundle) => {
                    if bundle.passed {
                        println!(
                            "{}: PASS ({:.2}s), report in {}",
                            bundle.experiment,
                            bundle.wall_clock_s,
                            out_dir.display()
                        );
                        ExitCode::SUCCESS
                    } else {
                        println!("{}: FAIL ({:.2}s)", bundle.experiment, bundle.wall_clock_s);
                        for f in &bundle.failures {
                            println!("  - {f}");
                        }
                        ExitCode::from(5)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
