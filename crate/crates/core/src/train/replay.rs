use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};

/// One transition as stored for replay. `h_prev` is the message the agent
/// acted on when the step was collected; training recomputes messages.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub t: usize,
    pub agent: usize,
    pub h_prev: Vec<f64>,
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

/// A whole episode. Only the last step may be, and must be, terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    steps: Vec<EpisodeStep>,
}

impl Episode {
    pub fn new(steps: Vec<EpisodeStep>) -> Result<Self> {
        let Some(last) = steps.last() else {
            return Err(Error::Argument("an episode needs at least one step".into()));
        };
        if !last.terminal {
            return Err(Error::Argument(
                "the last step of an episode must be terminal".into(),
            ));
        }
        if steps[..steps.len() - 1].iter().any(|s| s.terminal) {
            return Err(Error::Argument(
                "only the last step of an episode may be terminal".into(),
            ));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[EpisodeStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Reward earned while `agent` was active.
    pub fn agent_reward(&self, agent: usize) -> f64 {
        self.steps
            .iter()
            .filter(|s| s.agent == agent)
            .map(|s| s.reward)
            .sum()
    }

    /// Split into maximal runs of one active agent. Each run ends in a
    /// terminal step, has zero messages and restarts `t` at 1.
    pub fn split_by_agent(&self) -> Vec<(usize, Episode)> {
        let mut out: Vec<(usize, Vec<EpisodeStep>)> = Vec::new();
        for s in &self.steps {
            let mut step = s.clone();
            step.h_prev.iter_mut().for_each(|v| *v = 0.0);
            match out.last_mut() {
                Some((agent, run)) if *agent == s.agent => {
                    step.t = run.len() + 1;
                    run.push(step);
                }
                _ => {
                    if let Some((_, run)) = out.last_mut() {
                        run.last_mut().expect("runs are nonempty").terminal = true;
                    }
                    step.t = 1;
                    out.push((s.agent, vec![step]));
                }
            }
        }
        out.into_iter()
            .map(|(agent, steps)| (agent, Episode { steps }))
            .collect()
    }
}

/// FIFO episode memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(4096)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Append, evicting the oldest episode when full.
    pub fn push(&mut self, episode: Episode) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    /// `n` distinct episodes chosen uniformly without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Episode>> {
        if n > self.episodes.len() || n == 0 {
            return Err(Error::InsufficientData {
                needed: n.max(1),
                available: self.episodes.len(),
            });
        }
        Ok(rand::seq::index::sample(rng, self.episodes.len(), n)
            .into_iter()
            .map(|i| &self.episodes[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn episode(tag: f64) -> Episode {
        Episode::new(vec![EpisodeStep {
            t: 1,
            agent: 0,
            h_prev: vec![],
            obs: vec![tag],
            action: vec![0.0],
            reward: tag,
            terminal: true,
        }])
        .unwrap()
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2).unwrap();
        for k in 0..3 {
            b.push(episode(k as f64));
        }
        let tags: Vec<f64> = b.iter().map(|e| e.total_reward()).collect();
        assert_eq!(tags, vec![1.0, 2.0]);
    }

    #[test]
    fn sample_is_distinct() {
        let mut b = ReplayBuffer::new(10).unwrap();
        for k in 0..10 {
            b.push(episode(k as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tags: Vec<i64> = b
            .sample(10, &mut rng)
            .unwrap()
            .iter()
            .map(|e| e.total_reward() as i64)
            .collect();
        tags.sort();
        assert_eq!(tags, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn too_few_episodes() {
        let mut b = ReplayBuffer::new(10).unwrap();
        b.push(episode(0.0));
        let err = b.sample(2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert_eq!(
            err,
            Error::InsufficientData {
                needed: 2,
                available: 1
            }
        );
    }

    #[test]
    fn split_marks_scenario_switch_terminal() {
        let step = |t, agent, terminal| EpisodeStep {
            t,
            agent,
            h_prev: vec![0.5],
            obs: vec![0.0],
            action: vec![0.0],
            reward: t as f64,
            terminal,
        };
        let ep = Episode::new(vec![
            step(1, 0, false),
            step(2, 0, false),
            step(3, 1, false),
            step(4, 1, true),
        ])
        .unwrap();
        let parts = ep.split_by_agent();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].0, 0);
        assert_eq!(
            parts[0].1.steps().iter().map(|s| s.terminal).collect::<Vec<_>>(),
            vec![false, true]
        );
        assert_eq!(
            parts[1].1.steps().iter().map(|s| s.t).collect::<Vec<_>>(),
            vec![1, 2]
        );
        assert_eq!(parts[1].1.total_reward(), 7.0);
        assert!(parts
            .iter()
            .all(|(_, e)| e.steps().iter().all(|s| s.h_prev == vec![0.0])));
        assert_eq!(ep.agent_reward(0), 3.0);
    }

    #[test]
    fn terminal_only_at_end() {
        let mut s = episode(0.0).steps()[0].clone();
        assert!(Episode::new(vec![]).is_err());
        s.terminal = false;
        assert!(Episode::new(vec![s.clone()]).is_err());
        let mut end = s.clone();
        end.terminal = true;
        assert!(Episode::new(vec![end.clone(), end]).is_err());
    }
}
