use rand::Rng;

use super::replay::{Episode, ReplayBuffer};
use super::{CommLossMode, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{
    actor_grad, bellman_target, comm_grad_into, critic_loss_and_grad, Actor, ActorSample, Bootstrap,
    CommModule, Critic, CriticSample, ModelDims, Policy, TargetSet,
};
use crate::numerics::{Adam, AdamConfig, Parameterized};

/// How a learner treats one agent.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySlot {
    /// A trained actor.
    Learned,
    /// A frozen action vector.
    Fixed(Vec<f64>),
    /// The agent belongs to another learner.
    Absent,
}

/// Everything one minibatch contributes before any parameter moves.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub critic_loss: f64,
    pub mean_q: f64,
    pub steps: usize,
    /// Regression targets, `[episode][step]`.
    pub targets: Vec<Vec<f64>>,
    /// Gradient of the critic loss.
    pub critic: Vec<f64>,
    /// Ascent direction of each learned actor's objective, by agent.
    pub actors: Vec<Option<Vec<f64>>>,
    /// Gradient of the communication objective.
    pub comm: Option<Vec<f64>>,
}

/// Summary of one minibatch update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub mean_q: f64,
    pub steps: usize,
}

/// One critic, its policies, an optional communication module, their
/// optimizers, targets and replay memory.
#[derive(Debug, Clone)]
pub struct Learner {
    dims: ModelDims,
    pub critic: Critic,
    pub policies: Vec<Option<Policy>>,
    pub comm: Option<CommModule>,
    pub targets: TargetSet,
    pub critic_opt: Adam,
    pub actor_opts: Vec<Option<Adam>>,
    pub comm_opt: Option<Adam>,
    pub buffer: ReplayBuffer,
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(
        dims: ModelDims,
        slots: &[PolicySlot],
        with_comm: bool,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        dims.validate()?;
        if slots.len() != dims.n_agents() {
            return Err(Error::Config(format!(
                "{} policy slots for {} agents",
                slots.len(),
                dims.n_agents()
            )));
        }
        if with_comm && dims.message_dim == 0 {
            return Err(Error::Config("communication needs a positive message_dim".into()));
        }
        let critic = Critic::init(&dims, rng);
        let mut policies = Vec::with_capacity(slots.len());
        for (agent, slot) in slots.iter().enumerate() {
            policies.push(match slot {
                PolicySlot::Learned => Some(Policy::Learned(Actor::init(agent, &dims, rng))),
                PolicySlot::Fixed(a) => {
                    if a.len() != dims.action_dims[agent] {
                        return Err(Error::Shape {
                            context: "fixed policy action",
                            expected: dims.action_dims[agent],
                            got: a.len(),
                        });
                    }
                    Some(Policy::Fixed(a.clone()))
                }
                PolicySlot::Absent => None,
            });
        }
        let comm = with_comm.then(|| CommModule::init(&dims, rng));
        let targets = TargetSet::new(&critic, &policies, cfg.tau)?;
        let critic_opt = Adam::new(critic.num_params(), AdamConfig::with_lr(cfg.lr_critic));
        let actor_opts = policies
            .iter()
            .map(|p| {
                p.as_ref()
                    .and_then(Policy::actor)
                    .map(|a| Adam::new(a.num_params(), AdamConfig::with_lr(cfg.lr_actor)))
            })
            .collect();
        let comm_opt = comm
            .as_ref()
            .map(|c| Adam::new(c.num_params(), AdamConfig::with_lr(cfg.lr_comm)));
        Ok(Self {
            dims,
            critic,
            policies,
            comm,
            targets,
            critic_opt,
            actor_opts,
            comm_opt,
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn owns(&self, agent: usize) -> bool {
        self.policies.get(agent).is_some_and(Option::is_some)
    }

    pub fn zero_message(&self) -> Vec<f64> {
        vec![0.0; self.dims.message_dim]
    }

    /// Messages `h_0..=h_L` for an episode under the current module.
    fn messages(&self, episode: &Episode) -> Result<(Vec<Vec<f64>>, Option<crate::model::MessageTrace>)> {
        match &self.comm {
            Some(comm) => {
                let obs: Vec<&[f64]> = episode.steps().iter().map(|s| s.obs.as_slice()).collect();
                let act: Vec<&[f64]> = episode.steps().iter().map(|s| s.action.as_slice()).collect();
                let trace = comm.replay(&obs, &act)?;
                Ok((trace.messages.clone(), Some(trace)))
            }
            None => Ok((vec![self.zero_message(); episode.len() + 1], None)),
        }
    }

    /// Scale every optimizer's learning rate to `scale` times its configured value.
    pub fn set_lr_scale(&mut self, cfg: &TrainConfig, scale: f64) {
        self.critic_opt.config.lr = cfg.lr_critic * scale;
        for opt in self.actor_opts.iter_mut().flatten() {
            opt.config.lr = cfg.lr_actor * scale;
        }
        if let Some(opt) = self.comm_opt.as_mut() {
            opt.config.lr = cfg.lr_comm * scale;
        }
    }

    /// One gradient step on every network from a minibatch of episodes,
    /// followed by a soft target update.
    pub fn update(&mut self, batch: &[&Episode], cfg: &TrainConfig) -> Result<UpdateStats> {
        let g = self.gradients(batch, cfg)?;
        self.critic_opt.update(&mut self.critic, &g.critic)?;
        for (agent, grad) in g.actors.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let descent: Vec<f64> = grad.iter().map(|v| -v).collect();
            let actor = self.policies[agent].as_mut().and_then(Policy::actor_mut);
            let opt = self.actor_opts[agent].as_mut();
            if let (Some(actor), Some(opt)) = (actor, opt) {
                opt.update(actor, &descent)?;
            }
        }
        if let (Some(comm), Some(opt), Some(grad)) =
            (self.comm.as_mut(), self.comm_opt.as_mut(), g.comm.as_ref())
        {
            opt.update(comm, grad)?;
        }
        self.targets.soft_update(&self.critic, &self.policies)?;
        Ok(UpdateStats {
            critic_loss: g.critic_loss,
            mean_q: g.mean_q,
            steps: g.steps,
        })
    }

    /// Replay messages under the current communication module, then walk
    /// each episode backwards in time accumulating critic, actor and
    /// communication gradients. Parameters are left untouched.
    pub fn gradients(&mut self, batch: &[&Episode], cfg: &TrainConfig) -> Result<Gradients> {
        if batch.is_empty() {
            return Err(Error::Argument("update on an empty minibatch".into()));
        }
        let mut messages = Vec::with_capacity(batch.len());
        let mut traces = Vec::with_capacity(batch.len());
        for ep in batch {
            let (m, t) = self.messages(ep)?;
            messages.push(m);
            traces.push(t);
        }

        let mut index = Vec::new();
        let mut targets = Vec::new();
        let mut by_episode: Vec<Vec<f64>> = batch.iter().map(|ep| vec![0.0; ep.len()]).collect();
        for (e, ep) in batch.iter().enumerate() {
            let steps = ep.steps();
            for k in (0..steps.len()).rev() {
                let s = &steps[k];
                if !self.owns(s.agent) {
                    return Err(Error::Argument(format!(
                        "episode step for agent {} this learner does not own",
                        s.agent
                    )));
                }
                let next = (!s.terminal).then(|| Bootstrap {
                    message: &messages[e][k + 1],
                    obs: &steps[k + 1].obs,
                    agent: steps[k + 1].agent,
                });
                let y = bellman_target(s.reward, cfg.gamma, &self.targets, next)?;
                by_episode[e][k] = y;
                targets.push(y);
                index.push((e, k));
            }
        }
        let n = index.len();
        let samples: Vec<CriticSample<'_>> = index
            .iter()
            .zip(&targets)
            .map(|(&(e, k), &y)| {
                let s = &batch[e].steps()[k];
                CriticSample {
                    message: &messages[e][k],
                    obs: &s.obs,
                    action: &s.action,
                    agent: s.agent,
                    target: y,
                }
            })
            .collect();
        let closs = critic_loss_and_grad(&mut self.critic, &samples)?;
        let mean_q = samples
            .iter()
            .map(|s| self.critic.q(s.message, s.obs, s.action, s.agent))
            .sum::<Result<f64>>()?
            / n as f64;

        let mut dl_dh: Vec<Vec<Vec<f64>>> = batch
            .iter()
            .map(|ep| vec![self.zero_message(); ep.len()])
            .collect();
        for (j, &(e, k)) in index.iter().enumerate() {
            if k > 0 {
                add_scaled(&mut dl_dh[e][k - 1], &closs.message_grads[j], 1.0);
            }
        }

        let mut actor_grads = vec![None; self.policies.len()];
        for agent in 0..self.policies.len() {
            let Some(Policy::Learned(actor)) = self.policies[agent].as_mut() else {
                continue;
            };
            let rows: Vec<(usize, usize)> = index
                .iter()
                .copied()
                .filter(|&(e, k)| batch[e].steps()[k].agent == agent)
                .collect();
            if rows.is_empty() {
                continue;
            }
            let asamples: Vec<ActorSample<'_>> = rows
                .iter()
                .map(|&(e, k)| ActorSample {
                    message: &messages[e][k],
                    obs: &batch[e].steps()[k].obs,
                    agent,
                })
                .collect();
            let obj = actor_grad(actor, &mut self.critic, &asamples)?;
            if cfg.comm_loss_mode == CommLossMode::Both {
                let scale = rows.len() as f64 / n as f64;
                for (j, &(e, k)) in rows.iter().enumerate() {
                    if k > 0 {
                        add_scaled(&mut dl_dh[e][k - 1], &obj.message_grads[j], -scale);
                    }
                }
            }
            actor_grads[agent] = Some(obj.grad);
        }

        let comm_grad = match &self.comm {
            Some(comm) => {
                let mut g = vec![0.0; comm.num_params()];
                for (e, trace) in traces.iter().enumerate() {
                    if let Some(trace) = trace {
                        comm_grad_into(comm, trace, &dl_dh[e], &mut g)?;
                    }
                }
                Some(g)
            }
            None => None,
        };

        Ok(Gradients {
            critic_loss: closs.loss,
            mean_q,
            steps: n,
            targets: by_episode,
            critic: closs.grad,
            actors: actor_grads,
            comm: comm_grad,
        })
    }
}

fn add_scaled(acc: &mut [f64], g: &[f64], scale: f64) {
    for (a, v) in acc.iter_mut().zip(g) {
        *a += scale * v;
    }
}
