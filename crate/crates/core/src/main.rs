use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use enas_lab::harness::{self, Analysis, ExperimentConfig};
use enas_lab::selftest::selftest;
use enas_lab::simlab::TrainType;

#[derive(Parser)]
#[command(name = "enas-lab", version, about = "Weight-sharing recurrent-cell search experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a search and write all artifacts into the output directory.
    Search {
        /// JSON experiment config; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// random, unsupervised, supervised or uniform
        #[arg(long)]
        mode: Option<TrainType>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate one analysis CSV from a run's checkpoints.
    Analyze {
        #[arg(long)]
        run: PathBuf,
        /// argmax, ppl_dist or hidden
        #[arg(long)]
        which: Analysis,
    },
    /// Build the cross-mode correlation table from several runs.
    Correlate {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrain the best evaluated architecture from scratch.
    DeriveFinal {
        #[arg(long)]
        run: PathBuf,
    },
    /// Gradient checks and brute-force cross-checks.
    Selftest,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Search { config, mode, seed, out } => {
            let mut cfg = match &config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            cfg.check()?;
            let summary = harness::run_search(&cfg, &mut |l| {
                eprintln!(
                    "epoch {:>3}  shared loss {:.4}  reward {}  updates {}  buffer {}",
                    l.epoch,
                    l.shared_loss,
                    l.mean_reward.map_or("-".into(), |r| format!("{r:.4}")),
                    l.controller_updates,
                    l.buffer_size
                );
            })
            .context("search failed")?;
            println!(
                "wrote {} (controller updates {}, collapse score {})",
                summary.dir.display(),
                summary.controller_updates,
                summary.collapse_score
            );
        }
        Command::Analyze { run, which } => {
            let path = harness::analyze(&run, which)?;
            println!("wrote {}", path.display());
        }
        Command::Correlate { runs, out } => {
            let table = harness::correlate(&runs, &out)?;
            for r in &table.rows {
                println!(
                    "{:<13} act {:>7.3}  conn {:>7.3}  ged {:>7.3}  perf {:>7.3}",
                    r.train_type.name(),
                    r.common_act,
                    r.common_conn,
                    r.ged,
                    r.perf_diff
                );
            }
            println!("wrote {}", out.display());
        }
        Command::DeriveFinal { run } => {
            let f = harness::derive_final(&run)?;
            println!(
                "best {}  ppl {} -> {}",
                f.best_arch.canonical(),
                f.initial_ppl,
                f.final_ppl
            );
        }
        Command::Selftest => {
            let lines = selftest();
            for l in &lines {
                println!("{} {:<32} {}", if l.passed { "PASS" } else { "FAIL" }, l.name, l.detail);
            }
            let failed = lines.iter().filter(|l| !l.passed).count();
            if failed > 0 {
                bail!("{failed} selftest check(s) failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
