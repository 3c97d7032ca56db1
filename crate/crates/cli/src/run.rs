//! The subcommands, usable as library calls.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use mardpg_core::baselines::{paired_outcomes, sign_test, Variant};
use mardpg_core::env::{scripted_optimal_gap, GapReport, GapSearch, SimConfig};
use mardpg_core::train::{metrics_header, EvalSummary, MetricsRow, Trainer};

use crate::config::ExperimentConfig;
use crate::plot;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.txt";

pub struct RunOutcome {
    pub trainer: Trainer,
    pub metrics: Vec<MetricsRow>,
}

/// Train for the configured number of epochs.
pub fn train(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    train_until(cfg, cfg.train.epochs)
}

/// Train until `stop` epochs (at most the configured count) have completed.
/// The output directory holds a resumable checkpoint afterwards.
pub fn train_until(cfg: &ExperimentConfig, stop: usize) -> Result<RunOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    fs::write(cfg.out.join(CONFIG_FILE), cfg.to_text()).context("writing config.txt")?;
    let trainer = Trainer::new(cfg.variant, cfg.sim.clone(), cfg.train.clone())?;
    write_metrics(&cfg.out, &trainer, &[])?;
    drive(cfg, trainer, Vec::new(), stop.min(cfg.train.epochs))
}

/// Continue the run stored in `out` up to its configured epoch count.
pub fn resume(out: &Path, plots: bool) -> Result<RunOutcome> {
    let mut cfg = ExperimentConfig::load(&out.join(CONFIG_FILE))?;
    cfg.out = out.to_path_buf();
    cfg.plots = cfg.plots && plots;
    let bytes = fs::read(out.join(CHECKPOINT_FILE)).context("reading checkpoint.bin")?;
    let trainer = Trainer::from_checkpoint(&bytes, cfg.variant, cfg.sim.clone(), cfg.train.clone())
        .context("loading checkpoint.bin")?;
    let rows: Vec<MetricsRow> = read_metrics(&out.join(METRICS_FILE), &cfg.sim)?
        .into_iter()
        .filter(|r| r.epoch <= trainer.epoch())
        .collect();
    write_metrics(out, &trainer, &rows)?;
    let stop = cfg.train.epochs;
    drive(&cfg, trainer, rows, stop)
}

fn write_metrics(dir: &Path, trainer: &Trainer, rows: &[MetricsRow]) -> Result<()> {
    let mut f = BufWriter::new(File::create(dir.join(METRICS_FILE)).context("creating metrics.csv")?);
    writeln!(f, "{}", metrics_header(&trainer.sim_config().action_dims()))?;
    for r in rows {
        writeln!(f, "{}", r.to_csv())?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path, sim: &SimConfig) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let dims = sim.action_dims();
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != metrics_header(&dims) {
        bail!("{} has an unexpected header", path.display());
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            MetricsRow::from_csv(l, &dims)
                .with_context(|| format!("{} line {}: malformed row", path.display(), i + 2))
        })
        .collect()
}

fn save_checkpoint(dir: &Path, trainer: &Trainer) -> Result<()> {
    let tmp = dir.join("checkpoint.bin.tmp");
    fs::write(&tmp, trainer.to_checkpoint()).context("writing checkpoint")?;
    fs::rename(&tmp, dir.join(CHECKPOINT_FILE)).context("replacing checkpoint.bin")?;
    Ok(())
}

fn drive(
    cfg: &ExperimentConfig,
    mut trainer: Trainer,
    mut rows: Vec<MetricsRow>,
    stop: usize,
) -> Result<RunOutcome> {
    let mut file = OpenOptions::new()
        .append(true)
        .open(cfg.out.join(METRICS_FILE))
        .context("opening metrics.csv")?;
    while trainer.epoch() < stop {
        if let Some(row) = trainer.run_epoch()? {
            writeln!(file, "{}", row.to_csv())?;
            file.flush()?;
            rows.push(row);
            save_checkpoint(&cfg.out, &trainer)?;
        }
    }
    save_checkpoint(&cfg.out, &trainer)?;
    if cfg.plots {
        if let Err(e) = plot::write_plots(&cfg.out, &rows) {
            eprintln!("warning: plotting failed: {e:#}");
        }
    }
    Ok(RunOutcome {
        trainer,
        metrics: rows,
    })
}

/// Evaluate the checkpoint in `cfg.out`, or the untrained policy when there is none.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<(EvalSummary, usize)> {
    let path = cfg.out.join(CHECKPOINT_FILE);
    let trainer = if path.exists() {
        let bytes = fs::read(&path).context("reading checkpoint.bin")?;
        Trainer::from_checkpoint(&bytes, cfg.variant, cfg.sim.clone(), cfg.train.clone())
            .context("loading checkpoint.bin")?
    } else {
        Trainer::new(cfg.variant, cfg.sim.clone(), cfg.train.clone())?
    };
    let e = trainer.evaluate(cfg.train.eval_episodes, cfg.train.seed)?;
    Ok((e, trainer.epoch()))
}

/// Initial and final evaluation of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub seed: u64,
    pub variant: Variant,
    pub initial: EvalSummary,
    pub last: EvalSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn get(&self, variant: Variant, seed: u64) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.variant == variant && r.seed == seed)
    }

    fn column(&self, variant: Variant, f: impl Fn(&ComparisonRow) -> f64) -> Vec<f64> {
        self.seeds
            .iter()
            .filter_map(|&s| self.get(variant, s))
            .map(f)
            .collect()
    }

    /// Paired sign test of `a` over `b` on the final value picked by `f`.
    pub fn sign_test(&self, a: Variant, b: Variant, f: impl Fn(&EvalSummary) -> f64 + Copy) -> SignTest {
        let xa = self.column(a, |r| f(&r.last));
        let xb = self.column(b, |r| f(&r.last));
        let (wins, losses, ties) = paired_outcomes(&xa, &xb);
        SignTest {
            wins,
            losses,
            ties,
            p_value: sign_test(wins, losses),
        }
    }

    /// Relative improvement of the mean final total reward over the mean initial one.
    pub fn improvement(&self, variant: Variant) -> f64 {
        let init = self.column(variant, |r| r.initial.mean_total_reward);
        let last = self.column(variant, |r| r.last.mean_total_reward);
        last.iter().sum::<f64>() / init.iter().sum::<f64>() - 1.0
    }

    /// Seeds where the store-search reward grew more than the main-search reward.
    pub fn store_gains_more(&self, variant: Variant) -> usize {
        self.column(variant, |r| {
            let store = r.last.reward_store - r.initial.reward_store;
            let main = r.last.reward_main - r.initial.reward_main;
            if store > main {
                1.0
            } else {
                0.0
            }
        })
        .iter()
        .filter(|&&v| v > 0.0)
        .count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "seed,variant,initial_total,initial_main,initial_store,final_total,final_main,final_store\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.seed,
                r.variant.as_str(),
                r.initial.mean_total_reward,
                r.initial.reward_main,
                r.initial.reward_store,
                r.last.mean_total_reward,
                r.last.reward_main,
                r.last.reward_store
            ));
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let line = |name: &str, t: &SignTest| {
            format!(
                "{name}: wins {} losses {} ties {} one-sided sign test p = {:.4}\n",
                t.wins, t.losses, t.ties, t.p_value
            )
        };
        s.push_str(&format!("seeds: {}\n", self.seeds.len()));
        for v in Variant::ALL {
            let last = self.column(v, |r| r.last.mean_total_reward);
            if last.is_empty() {
                continue;
            }
            let n = last.len() as f64;
            s.push_str(&format!(
                "{}: mean final total {:.4} (main {:.4}, store {:.4}), improvement over initial {:+.1}%\n",
                v.as_str(),
                last.iter().sum::<f64>() / n,
                self.column(v, |r| r.last.reward_main).iter().sum::<f64>() / n,
                self.column(v, |r| r.last.reward_store).iter().sum::<f64>() / n,
                100.0 * self.improvement(v)
            ));
        }
        s.push_str(&line(
            "ma_rdpg vs independent, total reward",
            &self.sign_test(Variant::MaRdpg, Variant::Independent, |e| e.mean_total_reward),
        ));
        s.push_str(&line(
            "ma_rdpg vs main_only_ew, store reward",
            &self.sign_test(Variant::MaRdpg, Variant::MainOnlyEw, |e| e.reward_store),
        ));
        s.push_str(&format!(
            "ma_rdpg seeds where store reward grew more than main reward: {}/{}\n",
            self.store_gains_more(Variant::MaRdpg),
            self.seeds.len()
        ));
        s
    }
}

/// Train every variant on each seed; per-run output goes to `out/runs`.
pub fn compare(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Comparison> {
    if seeds.is_empty() {
        bail!("compare needs at least one seed");
    }
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut rows = Vec::new();
    for &seed in seeds {
        for variant in Variant::ALL {
            let mut run = cfg.clone();
            run.variant = variant;
            run.train.seed = seed;
            run.out = cfg
                .out
                .join("runs")
                .join(format!("{}_seed{seed}", variant.as_str()));
            let initial = Trainer::new(variant, run.sim.clone(), run.train.clone())?
                .evaluate(run.train.eval_episodes, seed)?;
            let outcome = train(&run)?;
            let last = outcome.trainer.evaluate(run.train.eval_episodes, seed)?;
            rows.push(ComparisonRow {
                seed,
                variant,
                initial,
                last,
            });
        }
    }
    let cmp = Comparison {
        seeds: seeds.to_vec(),
        rows,
    };
    fs::write(cfg.out.join("comparison.csv"), cmp.to_csv()).context("writing comparison.csv")?;
    fs::write(cfg.out.join("summary.txt"), cmp.summary()).context("writing summary.txt")?;
    Ok(cmp)
}

pub fn certify_gap(sim: &SimConfig) -> Result<GapReport> {
    Ok(scripted_optimal_gap(sim, GapSearch::default())?)
}

pub fn gap_summary(r: &GapReport) -> String {
    format!(
        "coop_value {:.4} (se {:.4})\nindependent_value {:.4} (se {:.4})\ngap {:.4}, paired se {:.4}, z {:.2}\ncoop actions main {:?} store {:?}\nindependent actions main {:?} store {:?}\nepisodes per estimate {}\n",
        r.coop_value,
        r.coop_se,
        r.independent_value,
        r.independent_se,
        r.gap(),
        r.diff_se,
        r.z_score(),
        r.coop_actions[0],
        r.coop_actions[1],
        r.independent_actions[0],
        r.independent_actions[1],
        r.eval_episodes
    )
}
