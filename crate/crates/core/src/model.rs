//! Actors, the centralized critic, the LSTM communication module, target copies,
//! and the loss/gradient computations that train them.

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::numerics::{all_finite, Activation, LstmCell, LstmStepCache, Mlp, ParamView, Parameterized};

/// Sizes shared by every network of one learner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDims {
    pub obs_dim: usize,
    /// Action dimension of each agent, indexed by agent.
    pub action_dims: Vec<usize>,
    pub message_dim: usize,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
}

impl ModelDims {
    pub fn n_agents(&self) -> usize {
        self.action_dims.len()
    }

    pub fn max_action_dim(&self) -> usize {
        self.action_dims.iter().copied().max().unwrap_or(0)
    }

    pub fn critic_input_dim(&self) -> usize {
        self.message_dim + self.obs_dim + self.max_action_dim() + self.n_agents()
    }

    pub fn validate(&self) -> Result<()> {
        if self.action_dims.is_empty() {
            return Err(Error::Config("at least one agent is required".into()));
        }
        if self.obs_dim == 0 || self.action_dims.contains(&0) {
            return Err(Error::Config(
                "observation and action dims must be positive".into(),
            ));
        }
        if self.actor_hidden == 0 || self.critic_hidden == 0 {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Deterministic per-agent policy `μ(h_{t-1}, o_t)` with tanh-bounded output.
#[derive(Debug, Clone)]
pub struct Actor {
    agent: usize,
    message_dim: usize,
    obs_dim: usize,
    net: Mlp,
}

impl Actor {
    pub fn init<R: Rng + ?Sized>(agent: usize, dims: &ModelDims, rng: &mut R) -> Self {
        let net = Mlp::init(
            dims.message_dim + dims.obs_dim,
            &[dims.actor_hidden],
            dims.action_dims[agent],
            Activation::Tanh,
            rng,
        );
        Self {
            agent,
            message_dim: dims.message_dim,
            obs_dim: dims.obs_dim,
            net,
        }
    }

    pub fn from_net(agent: usize, message_dim: usize, obs_dim: usize, net: Mlp) -> Result<Self> {
        check_dim("Actor input", message_dim + obs_dim, net.input_dim())?;
        Ok(Self {
            agent,
            message_dim,
            obs_dim,
            net,
        })
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    fn input(&self, h: &[f64], o: &[f64]) -> Result<Vec<f64>> {
        check_dim("Actor message", self.message_dim, h.len())?;
        check_dim("Actor observation", self.obs_dim, o.len())?;
        let mut x = Vec::with_capacity(h.len() + o.len());
        x.extend_from_slice(h);
        x.extend_from_slice(o);
        Ok(x)
    }

    pub fn act(&self, h: &[f64], o: &[f64]) -> Result<Vec<f64>> {
        self.net.apply(&self.input(h, o)?)
    }

    fn forward_cached(&mut self, h: &[f64], o: &[f64]) -> Result<Vec<f64>> {
        let x = self.input(h, o)?;
        self.net.forward(&x)
    }
}

impl Parameterized for Actor {
    fn tensors(&self) -> Vec<ParamView<'_>> {
        self.net.tensors()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.tensors_mut()
    }
}

/// Value of `q` together with its gradient w.r.t. the message and the action.
#[derive(Debug, Clone, PartialEq)]
pub struct QGrads {
    pub q: f64,
    pub d_message: Vec<f64>,
    pub d_action: Vec<f64>,
}

/// Something that scores `(h, o, a)` for an agent and can differentiate the
/// score with respect to its message and action inputs.
pub trait ActionValue {
    fn q_with_input_grads(&mut self, h: &[f64], o: &[f64], a: &[f64], agent: usize) -> Result<QGrads>;
}

/// Centralized critic `Q(h_{t-1}, o_t, a_t, onehot(agent))`.
///
/// Actions shorter than the widest agent's action are zero-padded.
#[derive(Debug, Clone)]
pub struct Critic {
    message_dim: usize,
    obs_dim: usize,
    action_dim: usize,
    n_agents: usize,
    net: Mlp,
}

impl Critic {
    pub fn init<R: Rng + ?Sized>(dims: &ModelDims, rng: &mut R) -> Self {
        let net = Mlp::init(
            dims.critic_input_dim(),
            &[dims.critic_hidden],
            1,
            Activation::Identity,
            rng,
        );
        Self {
            message_dim: dims.message_dim,
            obs_dim: dims.obs_dim,
            action_dim: dims.max_action_dim(),
            n_agents: dims.n_agents(),
            net,
        }
    }

    pub fn from_net(dims: &ModelDims, net: Mlp) -> Result<Self> {
        check_dim("Critic input", dims.critic_input_dim(), net.input_dim())?;
        check_dim("Critic output", 1, net.output_dim())?;
        Ok(Self {
            message_dim: dims.message_dim,
            obs_dim: dims.obs_dim,
            action_dim: dims.max_action_dim(),
            n_agents: dims.n_agents(),
            net,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    /// The assembled network input, exposed for reference evaluations.
    pub fn input(&self, h: &[f64], o: &[f64], a: &[f64], agent: usize) -> Result<Vec<f64>> {
        check_dim("Critic message", self.message_dim, h.len())?;
        check_dim("Critic observation", self.obs_dim, o.len())?;
        if a.len() > self.action_dim {
            return Err(Error::Shape {
                context: "Critic action",
                expected: self.action_dim,
                got: a.len(),
            });
        }
        if agent >= self.n_agents {
            return Err(Error::Argument(format!(
                "agent {agent} out of range for a critic over {} agents",
                self.n_agents
            )));
        }
        let mut x = Vec::with_capacity(self.net.input_dim());
        x.extend_from_slice(h);
        x.extend_from_slice(o);
        x.extend_from_slice(a);
        x.resize(self.message_dim + self.obs_dim + self.action_dim, 0.0);
        x.extend((0..self.n_agents).map(|k| if k == agent { 1.0 } else { 0.0 }));
        Ok(x)
    }

    pub fn q(&self, h: &[f64], o: &[f64], a: &[f64], agent: usize) -> Result<f64> {
        let out = self.net.apply(&self.input(h, o, a, agent)?)?;
        if !out[0].is_finite() {
            return Err(Error::Numeric("critic produced a non-finite value".into()));
        }
        Ok(out[0])
    }

    /// Forward and backward for one sample with upstream `dL/dq = dl_dq`.
    /// Parameter gradients are added to `grad` when given.
    fn backprop(
        &mut self,
        h: &[f64],
        o: &[f64],
        a: &[f64],
        agent: usize,
        dl_dq: impl FnOnce(f64) -> f64,
        grad: Option<&mut [f64]>,
    ) -> Result<(f64, QGrads)> {
        let x = self.input(h, o, a, agent)?;
        let q = self.net.forward(&x)?[0];
        let up = dl_dq(q);
        let dx = self.net.backward_accumulate(&[up], grad)?;
        let d_message = dx[..self.message_dim].to_vec();
        let start = self.message_dim + self.obs_dim;
        let d_action = dx[start..start + a.len()].to_vec();
        Ok((
            up,
            QGrads {
                q,
                d_message,
                d_action,
            },
        ))
    }
}

impl ActionValue for Critic {
    fn q_with_input_grads(&mut self, h: &[f64], o: &[f64], a: &[f64], agent: usize) -> Result<QGrads> {
        Ok(self.backprop(h, o, a, agent, |_| 1.0, None)?.1)
    }
}

impl Parameterized for Critic {
    fn tensors(&self) -> Vec<ParamView<'_>> {
        self.net.tensors()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.tensors_mut()
    }
}

/// LSTM communication module: `h_t = LSTM(h_{t-1}, [o_t; a_t])`.
#[derive(Debug, Clone)]
pub struct CommModule {
    obs_dim: usize,
    action_dim: usize,
    cell: LstmCell,
}

/// Messages produced by replaying an episode's `(o_t, a_t)` sequence.
#[derive(Debug, Clone)]
pub struct MessageTrace {
    /// `h_0 ..= h_L`; `h_0` is the zero message.
    pub messages: Vec<Vec<f64>>,
    pub caches: Vec<LstmStepCache>,
}

impl CommModule {
    pub fn init<R: Rng + ?Sized>(dims: &ModelDims, rng: &mut R) -> Self {
        Self {
            obs_dim: dims.obs_dim,
            action_dim: dims.max_action_dim(),
            cell: LstmCell::init(dims.message_dim, dims.obs_dim + dims.max_action_dim(), rng),
        }
    }

    pub fn from_cell(dims: &ModelDims, cell: LstmCell) -> Result<Self> {
        check_dim("CommModule hidden", dims.message_dim, cell.hidden_dim())?;
        check_dim(
            "CommModule input",
            dims.obs_dim + dims.max_action_dim(),
            cell.input_dim(),
        )?;
        Ok(Self {
            obs_dim: dims.obs_dim,
            action_dim: dims.max_action_dim(),
            cell,
        })
    }

    pub fn cell(&self) -> &LstmCell {
        &self.cell
    }

    pub fn message_dim(&self) -> usize {
        self.cell.hidden_dim()
    }

    pub fn initial_state(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.cell.hidden_dim();
        (vec![0.0; n], vec![0.0; n])
    }

    fn input(&self, o: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        check_dim("CommModule observation", self.obs_dim, o.len())?;
        if a.len() > self.action_dim {
            return Err(Error::Shape {
                context: "CommModule action",
                expected: self.action_dim,
                got: a.len(),
            });
        }
        let mut x = Vec::with_capacity(self.obs_dim + self.action_dim);
        x.extend_from_slice(o);
        x.extend_from_slice(a);
        x.resize(self.obs_dim + self.action_dim, 0.0);
        Ok(x)
    }

    pub fn step(
        &self,
        h: &[f64],
        c: &[f64],
        o: &[f64],
        a: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, LstmStepCache)> {
        self.cell.step(h, c, &self.input(o, a)?)
    }

    /// Recompute `h_0..h_L` from stored observations and actions.
    pub fn replay<O, A>(&self, observations: &[O], actions: &[A]) -> Result<MessageTrace>
    where
        O: AsRef<[f64]>,
        A: AsRef<[f64]>,
    {
        if observations.len() != actions.len() {
            return Err(Error::State(format!(
                "replay over {} observations but {} actions",
                observations.len(),
                actions.len()
            )));
        }
        let (mut h, mut c) = self.initial_state();
        let mut messages = Vec::with_capacity(observations.len() + 1);
        let mut caches = Vec::with_capacity(observations.len());
        messages.push(h.clone());
        for (o, a) in observations.iter().zip(actions) {
            let (h2, c2, cache) = self.step(&h, &c, o.as_ref(), a.as_ref())?;
            messages.push(h2.clone());
            caches.push(cache);
            h = h2;
            c = c2;
        }
        Ok(MessageTrace { messages, caches })
    }
}

impl Parameterized for CommModule {
    fn tensors(&self) -> Vec<ParamView<'_>> {
        self.cell.tensors()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.cell.tensors_mut()
    }
}

/// What an agent acts with: a learned actor or a fixed ranking-weight vector.
#[derive(Debug, Clone)]
pub enum Policy {
    Learned(Actor),
    Fixed(Vec<f64>),
}

impl Policy {
    pub fn act(&self, h: &[f64], o: &[f64]) -> Result<Vec<f64>> {
        match self {
            Policy::Learned(actor) => actor.act(h, o),
            Policy::Fixed(a) => Ok(a.clone()),
        }
    }

    pub fn actor(&self) -> Option<&Actor> {
        match self {
            Policy::Learned(a) => Some(a),
            Policy::Fixed(_) => None,
        }
    }

    pub fn actor_mut(&mut self) -> Option<&mut Actor> {
        match self {
            Policy::Learned(a) => Some(a),
            Policy::Fixed(_) => None,
        }
    }
}

/// Slowly-tracking copies of the critic and policies used only for Bellman
/// targets. Indexed by agent; `None` marks an agent this learner never
/// bootstraps into.
#[derive(Debug, Clone)]
pub struct TargetSet {
    pub critic: Critic,
    pub policies: Vec<Option<Policy>>,
    pub tau: f64,
}

impl TargetSet {
    pub fn new(critic: &Critic, policies: &[Option<Policy>], tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(Self {
            critic: critic.clone(),
            policies: policies.to_vec(),
            tau,
        })
    }

    pub fn from_actors(critic: &Critic, actors: &[Actor], tau: f64) -> Result<Self> {
        let policies: Vec<Option<Policy>> =
            actors.iter().cloned().map(|a| Some(Policy::Learned(a))).collect();
        Self::new(critic, &policies, tau)
    }

    /// Soft-update the critic and every learned policy; fixed policies are copied.
    pub fn soft_update(&mut self, critic: &Critic, policies: &[Option<Policy>]) -> Result<()> {
        check_dim("TargetSet policies", self.policies.len(), policies.len())?;
        soft_update(&mut self.critic, critic, self.tau)?;
        for (t, p) in self.policies.iter_mut().zip(policies) {
            match (t, p) {
                (Some(Policy::Learned(t)), Some(Policy::Learned(a))) => soft_update(t, a, self.tau)?,
                (t, p) => *t = p.clone(),
            }
        }
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "target rate tau must lie in (0, 1], got {tau}"
        )))
    }
}

/// `target ← τ·online + (1−τ)·target`, element-wise.
pub fn soft_update<P: Parameterized>(target: &mut P, online: &P, tau: f64) -> Result<()> {
    check_tau(tau)?;
    let src = online.flat_params();
    check_dim("soft_update", target.num_params(), src.len())?;
    let mut k = 0;
    for t in target.tensors_mut() {
        for v in t.iter_mut() {
            *v = if tau == 1.0 {
                src[k]
            } else {
                tau * src[k] + (1.0 - tau) * *v
            };
            k += 1;
        }
    }
    Ok(())
}

/// The successor state a non-terminal Bellman target bootstraps from.
#[derive(Debug, Clone, Copy)]
pub struct Bootstrap<'a> {
    pub message: &'a [f64],
    pub obs: &'a [f64],
    pub agent: usize,
}

/// `y = r` at a terminal step, otherwise
/// `y = r + γ Q'(h_t, o_{t+1}, μ'_{next}(h_t, o_{t+1}), next)` with target networks.
pub fn bellman_target(
    reward: f64,
    gamma: f64,
    targets: &TargetSet,
    next: Option<Bootstrap<'_>>,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!("discount must lie in [0, 1], got {gamma}")));
    }
    let Some(next) = next else {
        return Ok(reward);
    };
    if gamma == 0.0 {
        return Ok(reward);
    }
    let policy = targets
        .policies
        .get(next.agent)
        .and_then(Option::as_ref)
        .ok_or_else(|| Error::Argument(format!("no target policy for agent {}", next.agent)))?;
    let a = policy.act(next.message, next.obs)?;
    let q = targets.critic.q(next.message, next.obs, &a, next.agent)?;
    Ok(reward + gamma * q)
}

/// One critic regression sample.
#[derive(Debug, Clone, Copy)]
pub struct CriticSample<'a> {
    pub message: &'a [f64],
    pub obs: &'a [f64],
    pub action: &'a [f64],
    pub agent: usize,
    pub target: f64,
}

#[derive(Debug, Clone)]
pub struct CriticLoss {
    /// Mean squared error over the batch.
    pub loss: f64,
    /// Gradient of `loss` w.r.t. the critic parameters.
    pub grad: Vec<f64>,
    /// Gradient of `loss` w.r.t. each sample's message input.
    pub message_grads: Vec<Vec<f64>>,
}

/// Mean of `(Q(h, o, a) − y)²` and its exact gradient; `y` is a constant.
pub fn critic_loss_and_grad(critic: &mut Critic, batch: &[CriticSample<'_>]) -> Result<CriticLoss> {
    if batch.is_empty() {
        return Err(Error::Argument("critic loss over an empty batch".into()));
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0; critic.num_params()];
    let mut loss = 0.0;
    let mut message_grads = Vec::with_capacity(batch.len());
    for s in batch {
        let mut err = 0.0;
        let (_, g) = critic.backprop(
            s.message,
            s.obs,
            s.action,
            s.agent,
            |q| {
                err = q - s.target;
                2.0 * err / n
            },
            Some(&mut grad),
        )?;
        loss += err * err / n;
        message_grads.push(g.d_message);
    }
    if !loss.is_finite() || !all_finite(&grad) {
        return Err(Error::Numeric("non-finite critic loss or gradient".into()));
    }
    Ok(CriticLoss {
        loss,
        grad,
        message_grads,
    })
}

/// One actor-objective sample.
#[derive(Debug, Clone, Copy)]
pub struct ActorSample<'a> {
    pub message: &'a [f64],
    pub obs: &'a [f64],
    pub agent: usize,
}

#[derive(Debug, Clone)]
pub struct ActorObjective {
    /// Mean `Q(h, o, μ(h, o))` over the batch.
    pub objective: f64,
    /// Gradient of `objective` w.r.t. the actor parameters (ascent direction).
    pub grad: Vec<f64>,
    /// Total derivative of `objective` w.r.t. each sample's message, through
    /// both the critic input and the actor input.
    pub message_grads: Vec<Vec<f64>>,
}

/// Deterministic policy gradient of `J(θ) = mean Q(h, o, μ(h, o; θ))`.
/// The critic is only read; its parameters are not touched.
pub fn actor_grad<Q: ActionValue + ?Sized>(
    actor: &mut Actor,
    critic: &mut Q,
    batch: &[ActorSample<'_>],
) -> Result<ActorObjective> {
    if batch.is_empty() {
        return Err(Error::Argument("actor objective over an empty batch".into()));
    }
    if let Some(s) = batch.iter().find(|s| s.agent != actor.agent) {
        return Err(Error::Argument(format!(
            "actor for agent {} given a sample of agent {}",
            actor.agent, s.agent
        )));
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0; actor.num_params()];
    let mut objective = 0.0;
    let mut message_grads = Vec::with_capacity(batch.len());
    for s in batch {
        let a = actor.forward_cached(s.message, s.obs)?;
        let qg = critic.q_with_input_grads(s.message, s.obs, &a, s.agent)?;
        objective += qg.q / n;
        let up: Vec<f64> = qg.d_action.iter().map(|g| g / n).collect();
        let dx = actor.net.backward_accumulate(&up, Some(&mut grad))?;
        let dm: Vec<f64> = qg
            .d_message
            .iter()
            .zip(&dx[..actor.message_dim])
            .map(|(direct, via_actor)| direct / n + via_actor)
            .collect();
        message_grads.push(dm);
    }
    if !all_finite(&grad) {
        return Err(Error::Numeric("non-finite actor gradient".into()));
    }
    Ok(ActorObjective {
        objective,
        grad,
        message_grads,
    })
}

/// Backpropagation through time for the communication module.
///
/// `dl_dh[t]` is the gradient of the scalar training objective w.r.t. the
/// message emitted at step `t + 1` (`trace.messages[t + 1]`).
pub fn comm_grad(comm: &CommModule, trace: &MessageTrace, dl_dh: &[Vec<f64>]) -> Result<Vec<f64>> {
    comm.cell.backward_through_time(&trace.caches, dl_dh)
}

pub(crate) fn comm_grad_into(
    comm: &CommModule,
    trace: &MessageTrace,
    dl_dh: &[Vec<f64>],
    grad: &mut [f64],
) -> Result<()> {
    comm.cell.backward_through_time_into(&trace.caches, dl_dh, grad)
}
