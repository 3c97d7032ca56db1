use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::learner::{Learner, PolicySlot};
use super::metrics::MetricsRow;
use super::replay::{Episode, EpisodeStep};
use super::TrainConfig;
use crate::baselines::{equal_weight_action, Variant};
use crate::env::{MarketEnv, SimConfig, MAIN_SEARCH, N_AGENTS, STORE_SEARCH};
use crate::error::{Error, Result};
use crate::model::{ModelDims, Policy};

const INIT_STREAM: u64 = 0;
const ENV_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const SAMPLE_STREAM: u64 = 3;
const EVAL_STREAM: u64 = 4;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seeds of the evaluation episodes for a training seed.
pub fn eval_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = stream_rng(seed, EVAL_STREAM);
    (0..n).map(|_| rng.gen()).collect()
}

/// Noiseless evaluation over a fixed set of episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub mean_total_reward: f64,
    pub reward_main: f64,
    pub reward_store: f64,
    /// Mean critic value of the actions taken, from each step's owning learner.
    pub mean_q: f64,
    /// `[agent][dim]`; zero for an agent that never acted.
    pub mean_actions: Vec<Vec<f64>>,
}

/// Roll one episode from a freshly reset `env`. Every learner with a
/// communication module advances its message on every step with the action
/// actually taken.
pub fn collect_episode(
    env: &mut MarketEnv,
    first_obs: Vec<f64>,
    learners: &[Learner],
    owner: &[usize],
    noise: Option<(f64, &mut dyn RngCore)>,
) -> Result<Episode> {
    if env.is_done() {
        return Err(Error::State(
            "collect_episode needs a freshly reset environment".into(),
        ));
    }
    let (sigma, mut rng) = match noise {
        Some((s, r)) => {
            if !(s >= 0.0) {
                return Err(Error::Argument(format!(
                    "noise std must be non-negative, got {s}"
                )));
            }
            (s, Some(r))
        }
        None => (0.0, None),
    };
    let mut state: Vec<Option<(Vec<f64>, Vec<f64>)>> = learners
        .iter()
        .map(|l| l.comm.as_ref().map(|c| c.initial_state()))
        .collect();
    let mut obs = first_obs;
    let mut steps = Vec::with_capacity(env.config().horizon);
    loop {
        let agent = env.active_agent();
        let li = owner[agent];
        let learner = &learners[li];
        let h_prev = match &state[li] {
            Some((h, _)) => h.clone(),
            None => learner.zero_message(),
        };
        let policy = learner.policies[agent]
            .as_ref()
            .ok_or_else(|| Error::State(format!("learner {li} has no policy for agent {agent}")))?;
        let mut action = policy.act(&h_prev, &obs)?;
        if let (Policy::Learned(_), Some(rng)) = (policy, rng.as_mut()) {
            for a in action.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *a = (*a + sigma * z).clamp(-1.0, 1.0);
            }
        }
        let res = env.step(&action)?;
        for (l, st) in learners.iter().zip(state.iter_mut()) {
            if let (Some(comm), Some((h, c))) = (l.comm.as_ref(), st.as_mut()) {
                let (h2, c2, _) = comm.step(h, c, &obs, &action)?;
                *h = h2;
                *c = c2;
            }
        }
        steps.push(EpisodeStep {
            t: steps.len() + 1,
            agent,
            h_prev,
            obs: std::mem::take(&mut obs),
            action,
            reward: res.reward,
            terminal: res.terminal,
        });
        match res.next_obs {
            Some(o) if !res.terminal => obs = o,
            _ => break,
        }
    }
    Episode::new(steps)
}

/// A training run in progress: models, optimizers, buffers and RNG streams.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub(crate) variant: Variant,
    pub(crate) sim: SimConfig,
    pub(crate) cfg: TrainConfig,
    pub(crate) env: MarketEnv,
    pub(crate) learners: Vec<Learner>,
    pub(crate) owner: Vec<usize>,
    pub(crate) env_rng: ChaCha8Rng,
    pub(crate) noise_rng: ChaCha8Rng,
    pub(crate) sample_rng: ChaCha8Rng,
    pub(crate) epoch: usize,
    pub(crate) episodes_seen: usize,
    pub(crate) loss_ema: Option<f64>,
}

/// Result of [`Trainer::run`].
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub trainer: Trainer,
    pub metrics: Vec<MetricsRow>,
}

impl Trainer {
    pub fn new(variant: Variant, sim: SimConfig, cfg: TrainConfig) -> Result<Self> {
        sim.validate()?;
        cfg.validate()?;
        let env = MarketEnv::new(sim.clone())?;
        let dims = ModelDims {
            obs_dim: sim.obs_dim,
            action_dims: sim.action_dims().to_vec(),
            message_dim: if variant.uses_communication() {
                cfg.message_dim
            } else {
                0
            },
            actor_hidden: cfg.actor_hidden,
            critic_hidden: cfg.critic_hidden,
        };
        let mut rng = stream_rng(cfg.seed, INIT_STREAM);
        let (learners, owner) = match variant {
            Variant::MaRdpg => {
                let slots = vec![PolicySlot::Learned; N_AGENTS];
                (
                    vec![Learner::new(dims, &slots, true, &cfg, &mut rng)?],
                    vec![0; N_AGENTS],
                )
            }
            Variant::Independent => {
                let mut learners = Vec::with_capacity(N_AGENTS);
                for agent in 0..N_AGENTS {
                    let slots: Vec<PolicySlot> = (0..N_AGENTS)
                        .map(|k| {
                            if k == agent {
                                PolicySlot::Learned
                            } else {
                                PolicySlot::Absent
                            }
                        })
                        .collect();
                    learners.push(Learner::new(dims.clone(), &slots, false, &cfg, &mut rng)?);
                }
                (learners, (0..N_AGENTS).collect())
            }
            Variant::MainOnlyEw => {
                let mut slots = vec![PolicySlot::Learned; N_AGENTS];
                slots[STORE_SEARCH] = PolicySlot::Fixed(equal_weight_action(sim.action_dim_store));
                (
                    vec![Learner::new(dims, &slots, false, &cfg, &mut rng)?],
                    vec![0; N_AGENTS],
                )
            }
        };
        Ok(Self {
            variant,
            env,
            learners,
            owner,
            env_rng: stream_rng(cfg.seed, ENV_STREAM),
            noise_rng: stream_rng(cfg.seed, NOISE_STREAM),
            sample_rng: stream_rng(cfg.seed, SAMPLE_STREAM),
            epoch: 0,
            episodes_seen: 0,
            loss_ema: None,
            sim,
            cfg,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn sim_config(&self) -> &SimConfig {
        &self.sim
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn learners(&self) -> &[Learner] {
        &self.learners
    }

    pub fn learners_mut(&mut self) -> &mut [Learner] {
        &mut self.learners
    }

    /// Index of the learner that acts for `agent`.
    pub fn owner(&self, agent: usize) -> usize {
        self.owner[agent]
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn episodes_seen(&self) -> usize {
        self.episodes_seen
    }

    pub fn smoothed_critic_loss(&self) -> Option<f64> {
        self.loss_ema
    }

    /// Collect one exploratory episode and file it into the replay buffers.
    pub fn collect(&mut self, noise_std: f64) -> Result<Episode> {
        let seed: u64 = self.env_rng.gen();
        let (obs, _) = self.env.reset(seed);
        let ep = collect_episode(
            &mut self.env,
            obs,
            &self.learners,
            &self.owner,
            Some((noise_std, &mut self.noise_rng)),
        )?;
        match self.variant {
            Variant::Independent => {
                for (agent, part) in ep.split_by_agent() {
                    self.learners[self.owner[agent]].buffer.push(part);
                }
            }
            Variant::MaRdpg | Variant::MainOnlyEw => self.learners[0].buffer.push(ep.clone()),
        }
        self.episodes_seen += 1;
        Ok(ep)
    }

    /// One epoch: collect, then update every learner whose buffer is large
    /// enough. Returns a metrics row when the epoch is an evaluation point.
    pub fn run_epoch(&mut self) -> Result<Option<MetricsRow>> {
        let sigma = self.cfg.noise_at(self.epoch);
        let lr_scale = self.cfg.lr_scale_at(self.epoch);
        for learner in self.learners.iter_mut() {
            learner.set_lr_scale(&self.cfg, lr_scale);
        }
        for _ in 0..self.cfg.episodes_per_epoch {
            self.collect(sigma)?;
        }
        for _ in 0..self.cfg.minibatches_per_epoch {
            let mut losses = Vec::with_capacity(self.learners.len());
            for learner in self.learners.iter_mut() {
                let batch = match learner.buffer.sample(self.cfg.batch_size, &mut self.sample_rng) {
                    Ok(b) => b.into_iter().cloned().collect::<Vec<_>>(),
                    Err(Error::InsufficientData { .. }) => continue,
                    Err(e) => return Err(e),
                };
                let refs: Vec<&Episode> = batch.iter().collect();
                losses.push(learner.update(&refs, &self.cfg)?.critic_loss);
            }
            if !losses.is_empty() {
                let loss = losses.iter().sum::<f64>() / losses.len() as f64;
                let w = self.cfg.loss_smoothing;
                self.loss_ema = Some(match self.loss_ema {
                    Some(prev) => (1.0 - w) * prev + w * loss,
                    None => loss,
                });
            }
        }
        self.epoch += 1;
        if self.epoch % self.cfg.eval_interval == 0 {
            Ok(Some(self.metrics_row()?))
        } else {
            Ok(None)
        }
    }

    /// Train up to `epochs` completed epochs, returning the new metrics rows.
    pub fn run_until(&mut self, epochs: usize) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        while self.epoch < epochs {
            if let Some(row) = self.run_epoch()? {
                rows.push(row);
            }
        }
        Ok(rows)
    }

    /// Build a trainer and run it for the configured number of epochs.
    pub fn run(variant: Variant, sim: SimConfig, cfg: TrainConfig) -> Result<TrainingRun> {
        let mut trainer = Self::new(variant, sim, cfg)?;
        let metrics = trainer.run_until(trainer.cfg.epochs)?;
        Ok(TrainingRun { trainer, metrics })
    }

    pub fn metrics_row(&self) -> Result<MetricsRow> {
        let e = self.evaluate(self.cfg.eval_episodes, self.cfg.seed)?;
        Ok(MetricsRow {
            variant: self.variant.as_str().to_string(),
            epoch: self.epoch,
            episodes_seen: self.episodes_seen,
            mean_total_reward: e.mean_total_reward,
            reward_main: e.reward_main,
            reward_store: e.reward_store,
            critic_loss: self.loss_ema.unwrap_or(f64::NAN),
            mean_q: e.mean_q,
            mean_actions: e.mean_actions,
        })
    }

    /// Noiseless rollouts on the evaluation episodes of `seed`. Uses its own
    /// environment and never touches model parameters or training RNGs.
    pub fn evaluate(&self, n_episodes: usize, seed: u64) -> Result<EvalSummary> {
        if n_episodes == 0 {
            return Err(Error::Argument("evaluation needs at least one episode".into()));
        }
        let mut env = MarketEnv::new(self.sim.clone())?;
        let dims = self.sim.action_dims();
        let mut action_sums: Vec<Vec<f64>> = dims.iter().map(|&d| vec![0.0; d]).collect();
        let mut action_counts = [0usize; N_AGENTS];
        let (mut main, mut store, mut q_sum) = (0.0, 0.0, 0.0);
        let mut n_steps = 0usize;
        for s in eval_seeds(seed, n_episodes) {
            let (obs, _) = env.reset(s);
            let ep = collect_episode(&mut env, obs, &self.learners, &self.owner, None)?;
            main += ep.agent_reward(MAIN_SEARCH);
            store += ep.agent_reward(STORE_SEARCH);
            for step in ep.steps() {
                let learner = &self.learners[self.owner[step.agent]];
                q_sum += learner
                    .critic
                    .q(&step.h_prev, &step.obs, &step.action, step.agent)?;
                n_steps += 1;
                for (acc, a) in action_sums[step.agent].iter_mut().zip(&step.action) {
                    *acc += a;
                }
                action_counts[step.agent] += 1;
            }
        }
        let n = n_episodes as f64;
        let mean_actions = action_sums
            .into_iter()
            .zip(action_counts)
            .map(|(sums, c)| {
                sums.into_iter()
                    .map(|v| if c > 0 { v / c as f64 } else { 0.0 })
                    .collect()
            })
            .collect();
        Ok(EvalSummary {
            mean_total_reward: (main + store) / n,
            reward_main: main / n,
            reward_store: store / n,
            mean_q: q_sum / n_steps.max(1) as f64,
            mean_actions,
        })
    }
}
