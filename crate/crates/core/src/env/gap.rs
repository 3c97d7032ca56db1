use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EpisodeStart, MarketEnv, SimConfig, MAIN_SEARCH};
use crate::error::{Error, Result};

/// Search effort for [`scripted_optimal_gap`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSearch {
    /// Common-random-number episodes used to screen every grid point.
    pub search_episodes: usize,
    /// Fresh episodes used to re-rank the best screened grid points.
    pub validation_episodes: usize,
    /// Grid points carried from screening into validation.
    pub finalists: usize,
    /// Fresh episodes used to value the two selected policy pairs.
    pub eval_episodes: usize,
    /// Alternating rounds of the joint (total-reward) search.
    pub joint_rounds: usize,
}

impl Default for GapSearch {
    fn default() -> Self {
        Self {
            search_episodes: 200,
            validation_episodes: 2_000,
            finalists: 6,
            eval_episodes: 10_000,
            joint_rounds: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub coop_value: f64,
    pub independent_value: f64,
    pub coop_se: f64,
    pub independent_se: f64,
    /// Standard error of the paired per-episode difference.
    pub diff_se: f64,
    pub coop_actions: [Vec<f64>; 2],
    pub independent_actions: [Vec<f64>; 2],
    pub eval_episodes: usize,
}

impl GapReport {
    pub fn gap(&self) -> f64 {
        self.coop_value - self.independent_value
    }

    /// Gap measured in standard errors of the paired difference.
    pub fn z_score(&self) -> f64 {
        if self.diff_se > 0.0 {
            self.gap() / self.diff_se
        } else if self.gap() > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }

    pub fn certified(&self, n_se: f64) -> bool {
        self.gap() > n_se * self.diff_se
    }
}

/// Per-scenario reward of one episode under constant per-scenario actions.
pub fn rollout_constant(env: &mut MarketEnv, seed: u64, actions: [&[f64]; 2]) -> Result<(f64, f64)> {
    let start = env.sample_start(seed);
    rollout_from(env, &start, actions)
}

fn rollout_from(env: &mut MarketEnv, start: &EpisodeStart, actions: [&[f64]; 2]) -> Result<(f64, f64)> {
    env.reset_from(start);
    let (mut main, mut store) = (0.0, 0.0);
    loop {
        let r = env.step(actions[env.active_agent()])?;
        main += r.info.reward_main;
        store += r.info.reward_store;
        if r.terminal {
            return Ok((main, store));
        }
    }
}

fn episode_seeds(base: u64, stream: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    (0..n).map(|_| rng.gen()).collect()
}

/// Every nonzero vector with entries in {-1, 0, 1}. Distinct entries mean
/// distinct ranking directions.
fn action_grid(dim: usize) -> Vec<Vec<f64>> {
    let total = 3usize.pow(dim as u32);
    (0..total)
        .map(|mut code| {
            (0..dim)
                .map(|_| {
                    let v = (code % 3) as f64 - 1.0;
                    code /= 3;
                    v
                })
                .collect::<Vec<f64>>()
        })
        .filter(|v| v.iter().any(|&x| x != 0.0))
        .collect()
}

#[derive(Clone, Copy)]
enum Objective {
    Main,
    Store,
    Total,
}

impl Objective {
    fn pick(self, (main, store): (f64, f64)) -> f64 {
        match self {
            Objective::Main => main,
            Objective::Store => store,
            Objective::Total => main + store,
        }
    }
}

struct Searcher {
    env: MarketEnv,
    search_seeds: Vec<u64>,
    validation_seeds: Vec<u64>,
    finalists: usize,
}

impl Searcher {
    /// Per-episode objective values, `[candidate][episode]`, with common random numbers.
    fn per_episode(
        &mut self,
        seeds: &[u64],
        candidates: &[Vec<f64>],
        agent: usize,
        other: &[f64],
        objective: Objective,
    ) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![Vec::with_capacity(seeds.len()); candidates.len()];
        for &seed in seeds {
            let start = self.env.sample_start(seed);
            for (k, a) in candidates.iter().enumerate() {
                let pair: [&[f64]; 2] = if agent == MAIN_SEARCH {
                    [a, other]
                } else {
                    [other, a]
                };
                out[k].push(objective.pick(rollout_from(&mut self.env, &start, pair)?));
            }
        }
        Ok(out)
    }

    /// Screen the whole grid, then re-rank the finalists on fresh episodes.
    ///
    /// With an incumbent, a finalist replaces it only when its paired
    /// validation improvement exceeds three standard errors.
    fn best_response(
        &mut self,
        grid: &[Vec<f64>],
        agent: usize,
        other: &[f64],
        objective: Objective,
        incumbent: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let seeds = self.search_seeds.clone();
        let screened = self.per_episode(&seeds, grid, agent, other, objective)?;
        let means: Vec<f64> = screened.iter().map(|v| mean_and_se(v).0).collect();
        let mut order: Vec<usize> = (0..grid.len()).collect();
        order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
        let mut finalists: Vec<Vec<f64>> = order
            .iter()
            .take(self.finalists.max(1))
            .map(|&k| grid[k].clone())
            .collect();
        if let Some(inc) = incumbent {
            finalists.retain(|f| f.as_slice() != inc);
            finalists.push(inc.to_vec());
        }
        let seeds = self.validation_seeds.clone();
        let validated = self.per_episode(&seeds, &finalists, agent, other, objective)?;
        let mut best = 0;
        for k in 1..finalists.len() {
            if mean_and_se(&validated[k]).0 > mean_and_se(&validated[best]).0 {
                best = k;
            }
        }
        if incumbent.is_some() {
            let inc = finalists.len() - 1;
            let diffs: Vec<f64> = validated[best]
                .iter()
                .zip(&validated[inc])
                .map(|(b, i)| b - i)
                .collect();
            let (gain, se) = mean_and_se(&diffs);
            if !(gain > 3.0 * se) {
                best = inc;
            }
        }
        Ok(finalists.swap_remove(best))
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Certifies that the environment rewards cooperation.
///
/// Searches a {-1, 0, 1} grid of constant ranking weights for (a) the
/// independent pair, where the main search maximizes its own reward and the
/// store search best-responds on its own reward, and (b) the joint pair,
/// found by alternating best responses on total reward starting from (a).
/// Both pairs are then valued on fresh common-random-number episodes.
pub fn scripted_optimal_gap(cfg: &SimConfig, search: GapSearch) -> Result<GapReport> {
    cfg.validate()?;
    if cfg.action_dim_main > 8 || cfg.action_dim_store > 8 {
        return Err(Error::Refused(format!(
            "action grid over dims ({}, {}) is too large; at most 8 per scenario",
            cfg.action_dim_main, cfg.action_dim_store
        )));
    }
    if cfg.n_products() > 1_000 || cfg.horizon > 50 || cfg.products_per_store > 50 {
        return Err(Error::Refused(format!(
            "configuration too large for exhaustive search: {} products, horizon {}",
            cfg.n_products(),
            cfg.horizon
        )));
    }
    if search.search_episodes == 0 || search.validation_episodes < 2 || search.eval_episodes < 2 {
        return Err(Error::Argument(
            "gap search needs search episodes and at least 2 validation and evaluation episodes".into(),
        ));
    }
    let mut searcher = Searcher {
        env: MarketEnv::new(cfg.clone())?.without_observations(),
        search_seeds: episode_seeds(cfg.seed, 1, search.search_episodes),
        validation_seeds: episode_seeds(cfg.seed, 2, search.validation_episodes),
        finalists: search.finalists,
    };
    let main_grid = action_grid(cfg.action_dim_main);
    let store_grid = action_grid(cfg.action_dim_store);
    let equal_store = vec![0.5; cfg.action_dim_store];

    let ind_main = searcher.best_response(&main_grid, 0, &equal_store, Objective::Main, None)?;
    let ind_store = searcher.best_response(&store_grid, 1, &ind_main, Objective::Store, None)?;

    let (mut co_main, mut co_store) = (ind_main.clone(), ind_store.clone());
    for _ in 0..search.joint_rounds {
        co_main = searcher.best_response(&main_grid, 0, &co_store, Objective::Total, Some(&co_main))?;
        co_store = searcher.best_response(&store_grid, 1, &co_main, Objective::Total, Some(&co_store))?;
    }

    let mut ind_totals = Vec::with_capacity(search.eval_episodes);
    let mut co_totals = Vec::with_capacity(search.eval_episodes);
    let env = &mut searcher.env;
    for seed in episode_seeds(cfg.seed, 3, search.eval_episodes) {
        let start = env.sample_start(seed);
        let (m, s) = rollout_from(env, &start, [&ind_main, &ind_store])?;
        ind_totals.push(m + s);
        let (m, s) = rollout_from(env, &start, [&co_main, &co_store])?;
        co_totals.push(m + s);
    }
    let diffs: Vec<f64> = co_totals.iter().zip(&ind_totals).map(|(c, i)| c - i).collect();
    let (coop_value, coop_se) = mean_and_se(&co_totals);
    let (independent_value, independent_se) = mean_and_se(&ind_totals);
    let (_, diff_se) = mean_and_se(&diffs);
    Ok(GapReport {
        coop_value,
        independent_value,
        coop_se,
        independent_se,
        diff_se,
        coop_actions: [co_main, co_store],
        independent_actions: [ind_main, ind_store],
        eval_episodes: search.eval_episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_covers_every_nonzero_direction() {
        let g = action_grid(3);
        assert_eq!(g.len(), 26);
        assert!(g.iter().all(|v| v.len() == 3));
    }

    #[test]
    fn oversized_configs_are_refused() {
        let cfg = SimConfig {
            action_dim_main: 9,
            obs_dim: 19,
            ..SimConfig::default()
        };
        assert!(matches!(
            scripted_optimal_gap(&cfg, GapSearch::default()),
            Err(Error::Refused(_))
        ));
    }
}
