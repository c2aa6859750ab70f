use std::path::PathBuf;
use std::process::ExitCode;

use adaptive_nmpc::experiments::{aggregate, plot, run_experiment, run_meta_train, ExperimentConfig};
use adaptive_nmpc::Error;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adaptive-nmpc", version, about = "Online adaptive neural MPC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train the residual network of a config and write its checkpoint
    MetaTrain {
        #[arg(long)]
        config: PathBuf,
        /// use the full epoch count
        #[arg(long)]
        paper_scale: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run an experiment and write trial CSVs, summary.json and figures
    Run {
        #[arg(long)]
        config: PathBuf,
        /// use the full trial and epoch counts
        #[arg(long)]
        paper_scale: bool,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute summary.json from the trial CSVs in a run directory
    Aggregate {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Redraw the SVG figures of a run directory
    Plot {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn load(path: &PathBuf, paper_scale: bool, trials: Option<usize>, seed: Option<u64>) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply_overrides(paper_scale, trials, seed);
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::MetaTrain {
            config,
            paper_scale,
            seed,
        } => {
            let cfg = load(&config, paper_scale, None, seed)?;
            let path = run_meta_train(&cfg)?;
            println!("checkpoint written to {}", path.display());
        }
        Command::Run {
            config,
            paper_scale,
            trials,
            seed,
        } => {
            let cfg = load(&config, paper_scale, trials, seed)?;
            match run_experiment(&cfg)? {
                Some(summary) => {
                    for (kind, k) in &summary.kinds {
                        let mut line = format!("{kind:>13}: {} trials", k.trials);
                        if let Some(r) = k.rmse {
                            line += &format!(", rmse {:.4} ± {:.4}", r.mean, r.std);
                        }
                        if let Some(s) = k.success_rate {
                            line += &format!(", success {:.0}%", 100.0 * s);
                        }
                        if let Some(s) = k.settle_time {
                            line += &format!(", settle {:.2} ± {:.2} s", s.mean, s.std);
                        }
                        if let Some(s) = k.steady_state_error {
                            line += &format!(", steady-state {:.4} m", s.mean);
                        }
                        if let Some(s) = k.time_to_tolerance {
                            line += &format!(", time-to-tol {:.2} s", s.mean);
                        }
                        if let (Some(e), Some(l)) = (k.early_error, k.late_error) {
                            line += &format!(", error [0,5) {:.4} m, [5,end) {:.4} m", e.mean, l.mean);
                        }
                        println!("{line}");
                    }
                    println!("results in {}", cfg.output_dir.display());
                }
                None => println!("checkpoint written to {}", cfg.meta.checkpoint.display()),
            }
        }
        Command::Aggregate { dir } => {
            aggregate(&dir)?;
            println!("wrote {}", dir.join("summary.json").display());
        }
        Command::Plot { dir } => {
            for p in plot(&dir)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
