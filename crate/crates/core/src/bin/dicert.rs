use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use dicert::acceptance;
use dicert::pipeline::{run_and_write, write_reference, ExperimentConfig};

#[derive(Parser)]
#[command(name = "dicert", version, about = "Device-independent randomness and self-testing pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulated experiment and write tables, figures and a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write the infinite-statistics randomness reference curve.
    Reference {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the acceptance checks and print one line per criterion.
    Selftest,
}

fn main() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let out = run_and_write(&cfg)?;
            for r in &out.rows {
                println!(
                    "theta {:.5}  B {:.5} ± {:.2e}  bits {:.5} ± {:.2e}  F {:.5}{}",
                    r.theta_target,
                    r.bell_value,
                    r.bell_sigma,
                    r.randomness_bits,
                    r.randomness_sigma,
                    r.certified_fidelity,
                    if r.flags.is_empty() { String::new() } else { format!("  [{}]", r.flags.join(", ")) }
                );
            }
            for f in &out.failures {
                eprintln!("theta {:.5} failed at {}: {}", f.theta_target, f.stage, f.reason);
            }
            println!("wrote {}", cfg.output_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Reference { config } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            for p in write_reference(&cfg)? {
                println!("{:.5},{:.5},{:.6}", p.theta, p.concurrence, p.randomness_bits);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest => {
            let report = acceptance::run_all();
            for line in &report {
                println!("{line}");
            }
            Ok(if report.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
