//! Analytic gradients against central finite differences.

use mardpg_core::model::{
    actor_grad, critic_loss_and_grad, Actor, ActorSample, Critic, CriticSample, ModelDims, Policy,
};
use mardpg_core::numerics::{finite_diff_grad, GradCheck, Parameterized};
use mardpg_core::train::{CommLossMode, Episode, EpisodeStep, Learner, PolicySlot, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;
const REL_TOL: f64 = 1e-4;
const ABS_TOL: f64 = 1e-6;
const ABS_FLOOR: f64 = 1e-4;

fn dims() -> ModelDims {
    ModelDims {
        obs_dim: 3,
        action_dims: vec![2, 1],
        message_dim: 3,
        actor_hidden: 6,
        critic_hidden: 8,
    }
}

fn vec_in(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64], what: &str) {
    assert_eq!(analytic.len(), numeric.len());
    let check = GradCheck::compare(analytic, numeric, ABS_FLOOR);
    assert!(
        check.passes(REL_TOL, ABS_TOL),
        "{what}: max rel {:.3e}, max abs {:.3e}",
        check.max_rel,
        check.max_abs_small
    );
}

struct Row {
    message: Vec<f64>,
    obs: Vec<f64>,
    action: Vec<f64>,
    agent: usize,
    target: f64,
}

fn rows(rng: &mut ChaCha8Rng, d: &ModelDims, n: usize) -> Vec<Row> {
    (0..n)
        .map(|_| {
            let agent = rng.gen_range(0..d.n_agents());
            Row {
                message: vec_in(rng, d.message_dim, 1.0),
                obs: vec_in(rng, d.obs_dim, 1.0),
                action: vec_in(rng, d.action_dims[agent], 1.0),
                agent,
                target: rng.gen_range(-2.0..2.0),
            }
        })
        .collect()
}

fn random_episode(rng: &mut ChaCha8Rng, d: &ModelDims, len: usize) -> Episode {
    let mut agent = rng.gen_range(0..d.n_agents());
    let steps = (0..len)
        .map(|k| {
            if rng.gen_bool(0.3) {
                agent = 1 - agent;
            }
            EpisodeStep {
                t: k + 1,
                agent,
                h_prev: vec![0.0; d.message_dim],
                obs: vec_in(rng, d.obs_dim, 1.0),
                action: vec_in(rng, d.action_dims[agent], 1.0),
                reward: rng.gen_range(0.0..3.0),
                terminal: k + 1 == len,
            }
        })
        .collect();
    Episode::new(steps).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn critic_loss_gradient_matches_finite_differences(seed in any::<u64>(), n in 1usize..8) {
        let d = dims();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut critic = Critic::init(&d, &mut rng);
        prop_assert!(critic.num_params() <= 500);
        let data = rows(&mut rng, &d, n);
        let batch: Vec<CriticSample<'_>> = data
            .iter()
            .map(|r| CriticSample {
                message: &r.message,
                obs: &r.obs,
                action: &r.action,
                agent: r.agent,
                target: r.target,
            })
            .collect();
        let analytic = critic_loss_and_grad(&mut critic, &batch).unwrap();

        let mut probe = critic.clone();
        let numeric = finite_diff_grad(
            |p| {
                probe.set_flat_params(p).unwrap();
                data.iter()
                    .map(|r| (probe.q(&r.message, &r.obs, &r.action, r.agent).unwrap() - r.target).powi(2))
                    .sum::<f64>()
                    / n as f64
            },
            &critic.flat_params(),
            EPS,
        )
        .unwrap();
        assert_close(&analytic.grad, &numeric, "critic parameters");

        for (j, r) in data.iter().enumerate() {
            let numeric = finite_diff_grad(
                |h| (critic.q(h, &r.obs, &r.action, r.agent).unwrap() - r.target).powi(2) / n as f64,
                &r.message,
                EPS,
            )
            .unwrap();
            assert_close(&analytic.message_grads[j], &numeric, "critic message input");
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences(seed in any::<u64>(), n in 1usize..8, agent in 0usize..2) {
        let d = dims();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut critic = Critic::init(&d, &mut rng);
        let mut actor = Actor::init(agent, &d, &mut rng);
        prop_assert!(actor.num_params() <= 500);
        let data: Vec<Row> = rows(&mut rng, &d, n)
            .into_iter()
            .map(|r| Row { agent, ..r })
            .collect();
        let batch: Vec<ActorSample<'_>> = data
            .iter()
            .map(|r| ActorSample { message: &r.message, obs: &r.obs, agent })
            .collect();
        let critic_before = critic.flat_params();
        let analytic = actor_grad(&mut actor, &mut critic, &batch).unwrap();
        prop_assert_eq!(critic.flat_params(), critic_before);

        let mut probe = actor.clone();
        let numeric = finite_diff_grad(
            |p| {
                probe.set_flat_params(p).unwrap();
                data.iter()
                    .map(|r| {
                        let a = probe.act(&r.message, &r.obs).unwrap();
                        critic.q(&r.message, &r.obs, &a, agent).unwrap()
                    })
                    .sum::<f64>()
                    / n as f64
            },
            &actor.flat_params(),
            EPS,
        )
        .unwrap();
        assert_close(&analytic.grad, &numeric, "actor parameters");

        for (j, r) in data.iter().enumerate() {
            let numeric = finite_diff_grad(
                |h| {
                    let a = actor.act(h, &r.obs).unwrap();
                    critic.q(h, &r.obs, &a, agent).unwrap() / n as f64
                },
                &r.message,
                EPS,
            )
            .unwrap();
            assert_close(&analytic.message_grads[j], &numeric, "actor message input");
        }
    }

    #[test]
    fn communication_gradient_matches_finite_differences(
        seed in any::<u64>(),
        lens in proptest::collection::vec(1usize..=5, 1..4),
        critic_only in any::<bool>(),
    ) {
        let d = dims();
        let mut cfg = TrainConfig {
            gamma: 0.9,
            ..TrainConfig::default()
        };
        if critic_only {
            cfg.comm_loss_mode = CommLossMode::CriticOnly;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slots = [PolicySlot::Learned, PolicySlot::Learned];
        let mut learner = Learner::new(d.clone(), &slots, true, &cfg, &mut rng).unwrap();
        // Targets differ from online networks so bootstrapped targets are not trivial.
        for p in learner.targets.policies.iter_mut().flatten() {
            if let Policy::Learned(a) = p {
                *a = Actor::init(a.agent(), &d, &mut rng);
            }
        }
        learner.targets.critic = Critic::init(&d, &mut rng);
        let episodes: Vec<Episode> = lens.iter().map(|&l| random_episode(&mut rng, &d, l)).collect();
        let batch: Vec<&Episode> = episodes.iter().collect();

        let comm = learner.comm.clone().unwrap();
        prop_assert!(comm.num_params() <= 500);
        let before = comm.flat_params();
        let g = learner.gradients(&batch, &cfg).unwrap();
        prop_assert_eq!(learner.comm.as_ref().unwrap().flat_params(), before.clone());
        let analytic = g.comm.clone().unwrap();

        let n: usize = episodes.iter().map(Episode::len).sum();
        let mut probe = comm.clone();
        let numeric = finite_diff_grad(
            |p| {
                probe.set_flat_params(p).unwrap();
                let mut total = 0.0;
                for (e, ep) in episodes.iter().enumerate() {
                    let obs: Vec<&[f64]> = ep.steps().iter().map(|s| s.obs.as_slice()).collect();
                    let act: Vec<&[f64]> = ep.steps().iter().map(|s| s.action.as_slice()).collect();
                    let trace = probe.replay(&obs, &act).unwrap();
                    for (k, s) in ep.steps().iter().enumerate() {
                        let h = &trace.messages[k];
                        let q = learner.critic.q(h, &s.obs, &s.action, s.agent).unwrap();
                        total += (q - g.targets[e][k]).powi(2);
                        if !critic_only {
                            let policy = learner.policies[s.agent].as_ref().unwrap();
                            let a = policy.act(h, &s.obs).unwrap();
                            total -= learner.critic.q(h, &s.obs, &a, s.agent).unwrap();
                        }
                    }
                }
                total / n as f64
            },
            &before,
            EPS,
        )
        .unwrap();
        assert_close(&analytic, &numeric, "communication parameters");
    }
}
