//! Episodic off-policy training of actors, critic and communication module.

mod checkpoint;
mod learner;
mod metrics;
mod replay;
mod trainer;

pub use checkpoint::{config_hash, CheckpointHeader, CHECKPOINT_VERSION};
pub use learner::{Gradients, Learner, PolicySlot, UpdateStats};
pub use metrics::{metrics_header, MetricsRow};
pub use replay::{Episode, EpisodeStep, ReplayBuffer};
pub use trainer::{collect_episode, eval_seeds, EvalSummary, Trainer, TrainingRun};

use crate::env::parse_value;
use crate::error::{Error, Result};

/// Which terms drive the communication module's gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommLossMode {
    /// Critic regression loss minus actor objectives.
    Both,
    /// Critic regression loss only.
    CriticOnly,
}

impl CommLossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CommLossMode::Both => "both",
            CommLossMode::CriticOnly => "critic_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(CommLossMode::Both),
            "critic_only" => Ok(CommLossMode::CriticOnly),
            other => Err(Error::Config(format!("unknown comm loss mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub gamma: f64,
    /// Episodes per minibatch.
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Episodes collected per epoch.
    pub episodes_per_epoch: usize,
    pub minibatches_per_epoch: usize,
    pub noise_start: f64,
    pub noise_end: f64,
    pub noise_decay_epochs: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_comm: f64,
    pub tau: f64,
    /// Learning rates fall linearly to this fraction of their initial value
    /// by the last epoch; 1 keeps them constant.
    pub lr_final_fraction: f64,
    pub message_dim: usize,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Smoothing weight of the newest critic loss in the reported average.
    pub loss_smoothing: f64,
    pub comm_loss_mode: CommLossMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1_200,
            gamma: 0.95,
            batch_size: 16,
            buffer_capacity: 2_000,
            episodes_per_epoch: 10,
            minibatches_per_epoch: 4,
            noise_start: 0.3,
            noise_end: 0.02,
            noise_decay_epochs: 600,
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            lr_comm: 1e-4,
            tau: 0.01,
            lr_final_fraction: 0.01,
            message_dim: 8,
            actor_hidden: 32,
            critic_hidden: 64,
            eval_interval: 25,
            eval_episodes: 200,
            loss_smoothing: 0.1,
            comm_loss_mode: CommLossMode::Both,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Every field as a `(key, value)` pair in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epochs", self.epochs.to_string()),
            ("gamma", self.gamma.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("buffer_capacity", self.buffer_capacity.to_string()),
            ("episodes_per_epoch", self.episodes_per_epoch.to_string()),
            ("minibatches_per_epoch", self.minibatches_per_epoch.to_string()),
            ("noise_start", self.noise_start.to_string()),
            ("noise_end", self.noise_end.to_string()),
            ("noise_decay_epochs", self.noise_decay_epochs.to_string()),
            ("lr_actor", self.lr_actor.to_string()),
            ("lr_critic", self.lr_critic.to_string()),
            ("lr_comm", self.lr_comm.to_string()),
            ("tau", self.tau.to_string()),
            ("lr_final_fraction", self.lr_final_fraction.to_string()),
            ("message_dim", self.message_dim.to_string()),
            ("actor_hidden", self.actor_hidden.to_string()),
            ("critic_hidden", self.critic_hidden.to_string()),
            ("eval_interval", self.eval_interval.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("loss_smoothing", self.loss_smoothing.to_string()),
            ("comm_loss_mode", self.comm_loss_mode.as_str().to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Set one field from text. Returns `Ok(false)` for an unknown key.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "gamma" => self.gamma = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "buffer_capacity" => self.buffer_capacity = parse_value(key, value)?,
            "episodes_per_epoch" => self.episodes_per_epoch = parse_value(key, value)?,
            "minibatches_per_epoch" => self.minibatches_per_epoch = parse_value(key, value)?,
            "noise_start" => self.noise_start = parse_value(key, value)?,
            "noise_end" => self.noise_end = parse_value(key, value)?,
            "noise_decay_epochs" => self.noise_decay_epochs = parse_value(key, value)?,
            "lr_actor" => self.lr_actor = parse_value(key, value)?,
            "lr_critic" => self.lr_critic = parse_value(key, value)?,
            "lr_comm" => self.lr_comm = parse_value(key, value)?,
            "tau" => self.tau = parse_value(key, value)?,
            "lr_final_fraction" => self.lr_final_fraction = parse_value(key, value)?,
            "message_dim" => self.message_dim = parse_value(key, value)?,
            "actor_hidden" => self.actor_hidden = parse_value(key, value)?,
            "critic_hidden" => self.critic_hidden = parse_value(key, value)?,
            "eval_interval" => self.eval_interval = parse_value(key, value)?,
            "eval_episodes" => self.eval_episodes = parse_value(key, value)?,
            "loss_smoothing" => self.loss_smoothing = parse_value(key, value)?,
            "comm_loss_mode" => self.comm_loss_mode = CommLossMode::parse(value.trim())?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("buffer_capacity", self.buffer_capacity),
            ("episodes_per_epoch", self.episodes_per_epoch),
            ("actor_hidden", self.actor_hidden),
            ("critic_hidden", self.critic_hidden),
            ("eval_interval", self.eval_interval),
            ("eval_episodes", self.eval_episodes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.batch_size > self.buffer_capacity {
            return Err(Error::Config("batch_size exceeds buffer_capacity".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        for (name, v) in [
            ("lr_actor", self.lr_actor),
            ("lr_critic", self.lr_critic),
            ("lr_comm", self.lr_comm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("noise_start", self.noise_start), ("noise_end", self.noise_end)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.lr_final_fraction > 0.0 && self.lr_final_fraction <= 1.0) {
            return Err(Error::Config("lr_final_fraction must lie in (0, 1]".into()));
        }
        if !(self.loss_smoothing > 0.0 && self.loss_smoothing <= 1.0) {
            return Err(Error::Config("loss_smoothing must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Multiplier on every learning rate during epoch `epoch` (0-based).
    pub fn lr_scale_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return 1.0;
        }
        let frac = (epoch as f64 / (self.epochs - 1) as f64).min(1.0);
        1.0 + (self.lr_final_fraction - 1.0) * frac
    }

    /// Exploration standard deviation during epoch `epoch` (0-based).
    pub fn noise_at(&self, epoch: usize) -> f64 {
        if self.noise_decay_epochs == 0 {
            return self.noise_end;
        }
        let frac = (epoch as f64 / self.noise_decay_epochs as f64).min(1.0);
        self.noise_start + (self.noise_end - self.noise_start) * frac
    }
}
