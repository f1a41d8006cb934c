use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use macrl::config::{PartialConfig, RunMode};
use macrl::harness::{
    default_eval_dir, default_output_root, evaluate, export_curves, run_campaign, select_best,
    ConvergenceRule,
};
use macrl::{Error, Result};

#[derive(Parser)]
#[command(
    name = "macrl",
    version,
    about = "Multi-agent MAC protocol learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a configuration into one campaign directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<RunMode>,
        /// Buffer size P.
        #[arg(long)]
        p: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Defaults to `$MACRL_OUT/<mode>_p<P>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test a checkpoint (its checkpoint.json) over fresh episodes.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-slot environment trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Print the best checkpoint of a campaign.
    SelectBest {
        #[arg(long)]
        run: PathBuf,
    },
    /// Smoothed across-seed delivery curves of one or more campaigns.
    Export {
        #[arg(long, value_delimiter = ',', required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        window: usize,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            mode,
            p,
            seeds,
            out,
        } => {
            let mut partial = PartialConfig::from_file(&config)?;
            if mode.is_some() {
                partial.mode = mode;
            }
            if p.is_some() {
                partial.buffer_size = p;
            }
            if seeds.is_some() {
                partial.seeds = seeds;
            }
            let cfg = partial.resolve()?;
            let out = out.unwrap_or_else(|| {
                default_output_root().join(format!("{}_p{}", cfg.mode.name(), cfg.buffer_size))
            });
            let manifest = run_campaign(&cfg, &out)?;
            for s in &manifest.seeds {
                match &s.error {
                    None => println!(
                        "seed {}: {} lifetimes, {} episodes, best selection score {}",
                        s.seed,
                        s.lifetimes,
                        s.episodes,
                        s.best_score.map_or("-".into(), |v| format!("{v:.2}"))
                    ),
                    Some(e) => eprintln!("seed {}: failed: {e}", s.seed),
                }
            }
            println!("campaign written to {}", out.display());
            if !manifest.all_ok() {
                return Err(Error::Protocol(
                    "some seeds failed; see manifest.json".into(),
                ));
            }
        }
        Command::Evaluate {
            checkpoint,
            episodes,
            out,
            trace,
        } => {
            let out = out.unwrap_or_else(|| default_eval_dir(&checkpoint));
            let report = evaluate(&checkpoint, episodes, &out, trace.as_deref())?;
            let s = &report.summary;
            println!(
                "median {:.2}  IQR [{:.2}, {:.2}]  whiskers [{:.2}, {:.2}]  outliers {}",
                s.median,
                s.q1,
                s.q3,
                s.whisker_low,
                s.whisker_high,
                s.outliers.len()
            );
        }
        Command::SelectBest { run } => {
            println!("{}", select_best(&run)?.display());
        }
        Command::Export { runs, out, window } => {
            let ex = export_curves(&runs, &out, window, &ConvergenceRule::default())?;
            for m in &ex.modes {
                println!(
                    "{}: {} seeds, best mean {:.2}, median convergence episode {}",
                    m.mode,
                    m.seeds.len(),
                    m.best_mean(ex.window),
                    m.median_convergence().map_or("-".into(), |e| e.to_string())
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
