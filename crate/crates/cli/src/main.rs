use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mardpg_cli::run;
use mardpg_cli::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "mardpg",
    version,
    about = "Train and compare cooperative ranking agents on a synthetic marketplace"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip SVG plots.
    #[arg(long)]
    no_plots: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if self.no_plots {
            cfg.plots = false;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant; writes metrics.csv, checkpoint.bin and plots.
    Train(Common),
    /// Evaluate the checkpoint in the output directory.
    Eval(Common),
    /// Train every variant over paired seeds and run sign tests.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds starting at the configured seed.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Check that cooperation beats independent optimization by more than 3 standard errors.
    CertifyGap(Common),
    /// Continue an interrupted `train` run.
    Resume {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_plots: bool,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Train(c) => {
            let cfg = c.load()?;
            let out = run::train(&cfg)?;
            report_last(&cfg, &out);
        }
        Command::Resume { out, no_plots } => {
            let res = run::resume(&out, !no_plots)?;
            println!("resumed to epoch {}", res.trainer.epoch());
            if let Some(r) = res.metrics.last() {
                println!("final mean total reward {:.4}", r.mean_total_reward);
            }
        }
        Command::Eval(c) => {
            let cfg = c.load()?;
            let (e, epoch) = run::evaluate(&cfg)?;
            println!("variant {} after {epoch} epochs", cfg.variant.as_str());
            println!(
                "mean_total_reward {:.4}\nreward_main {:.4}\nreward_store {:.4}\nmean_q {:.4}",
                e.mean_total_reward, e.reward_main, e.reward_store, e.mean_q
            );
            for (agent, a) in e.mean_actions.iter().enumerate() {
                println!("mean_action_{agent} {a:?}");
            }
        }
        Command::Compare { common, seeds } => {
            let cfg = common.load()?;
            let list: Vec<u64> = (0..seeds).map(|k| cfg.train.seed + k).collect();
            let cmp = run::compare(&cfg, &list)?;
            print!("{}", cmp.summary());
            println!("wrote {}", cfg.out.join("comparison.csv").display());
        }
        Command::CertifyGap(c) => {
            let cfg = c.load()?;
            let report = run::certify_gap(&cfg.sim)?;
            print!("{}", run::gap_summary(&report));
            if report.certified(3.0) {
                println!("certified: gap exceeds 3 standard errors");
            } else {
                println!("not certified");
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn report_last(cfg: &ExperimentConfig, out: &run::RunOutcome) {
    println!(
        "{} trained for {} epochs; output in {}",
        cfg.variant.as_str(),
        out.trainer.epoch(),
        cfg.out.display()
    );
    if let Some(r) = out.metrics.last() {
        println!(
            "final eval: total {:.4} main {:.4} store {:.4} critic loss {:.4}",
            r.mean_total_reward, r.reward_main, r.reward_store, r.critic_loss
        );
    }
}
