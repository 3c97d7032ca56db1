use mardpg_core::env::{feature, purchase_probability, MarketEnv, SimConfig, MAIN_SEARCH, STORE_SEARCH};
use mardpg_core::numerics::sigmoid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two stores with one product each, one product shown per step, two steps.
fn tiny_config() -> SimConfig {
    SimConfig {
        n_stores: 2,
        products_per_store: 1,
        user_dim: 1,
        obs_dim: 9,
        action_dim_main: 2,
        action_dim_store: 2,
        horizon: 2,
        kappa: 1.5,
        store_bonus: 2.0,
        price_lo: 0.5,
        price_hi: 2.0,
        main_candidates: 2,
        top_k: 1,
        seed: 0,
    }
}

fn install_tiny_catalog(env: &mut MarketEnv) {
    let specs = [(1.2, 0.3, 0.8, [0.9, 0.1]), (1.8, 0.2, 0.25, [0.1, 0.9])];
    for (p, (price, conv, pop, feats)) in env.catalog_mut().iter_mut().zip(specs) {
        p.price = price;
        p.conversion_quality = conv;
        p.store_popularity = pop;
        p.features = feats.to_vec();
    }
}

/// Exact expected return of the tiny market for the current user when the
/// main search always plays `main` (the store action is irrelevant: one product).
fn tiny_expected_return(env: &MarketEnv, main: &[f64]) -> f64 {
    let cfg = env.config();
    let cat = env.catalog();
    let score = |j: usize| main[0] * cat[j].features[0] + main[1] * cat[j].features[1];
    let j = if score(1) > score(0) { 1 } else { 0 };
    let p = &cat[j];
    let power = env.user().purchasing_power;
    let buy_main = purchase_probability(p, power, cfg, 1.0);
    let buy_store = purchase_probability(p, power, cfg, 1.0 + cfg.store_bonus * p.store_popularity);
    let nav = sigmoid(cfg.kappa * p.store_popularity);
    let first = p.price * buy_main;
    if env.user().patience < 2 {
        return first;
    }
    first + nav * p.price * buy_store + (1.0 - nav) * p.price * buy_main
}

#[test]
fn tiny_market_matches_its_exact_expectation() {
    for main in [[1.0, 0.0], [0.0, 1.0]] {
        let mut env = MarketEnv::new(tiny_config()).unwrap();
        let n = 40_000;
        let (mut sum, mut sum_sq, mut expected) = (0.0, 0.0, 0.0);
        for seed in 0..n {
            env.reset(seed);
            install_tiny_catalog(&mut env);
            expected += tiny_expected_return(&env, &main);
            let mut ret = 0.0;
            loop {
                let a = if env.active_agent() == MAIN_SEARCH {
                    main
                } else {
                    [0.3, -0.7]
                };
                let r = env.step(&a).unwrap();
                ret += r.reward;
                if r.terminal {
                    break;
                }
            }
            sum += ret;
            sum_sq += ret * ret;
        }
        let nf = n as f64;
        let mean = sum / nf;
        let se = ((sum_sq / nf - mean * mean) / nf).sqrt();
        let expected = expected / nf;
        assert!(
            (mean - expected).abs() < 4.0 * se,
            "action {main:?}: empirical {mean} vs exact {expected} (se {se})"
        );
    }
}

#[test]
fn tiny_market_step_details() {
    let mut env = MarketEnv::new(tiny_config()).unwrap();
    env.reset(5);
    install_tiny_catalog(&mut env);
    let r = env.step(&[0.0, 1.0]).unwrap();
    assert_eq!(r.info.shown, vec![1]);
    assert_eq!(r.info.clicked, Some(1));
    assert_eq!(r.info.click_probs, vec![1.0]);
    assert!((r.info.navigation_prob - sigmoid(1.5 * 0.25)).abs() < 1e-15);
    assert_eq!(r.info.reward_store, 0.0);
    assert_eq!(r.reward, r.info.reward_main);
    if r.info.navigated {
        assert_eq!(env.current_store(), Some(1));
        assert_eq!(r.next_agent, STORE_SEARCH);
    } else {
        assert_eq!(r.next_agent, MAIN_SEARCH);
    }
}

fn random_action(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

#[test]
fn random_rollouts_respect_the_contract() {
    let cfg = SimConfig::default();
    let mut env = MarketEnv::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..1000 {
        let (mut obs, mut agent) = env.reset(seed);
        assert_eq!(agent, MAIN_SEARCH);
        let mut steps = 0;
        let mut seen_store = false;
        loop {
            assert_eq!(obs.len(), cfg.obs_dim);
            assert!(obs.iter().all(|v| v.is_finite()));
            if seen_store {
                assert_eq!(agent, STORE_SEARCH, "store search is absorbing");
            }
            seen_store |= agent == STORE_SEARCH;
            let a = random_action(&mut rng, cfg.action_dims()[agent]);
            let r = env.step(&a).unwrap();
            steps += 1;
            assert!(r.reward >= 0.0 && r.reward <= cfg.price_hi);
            assert_eq!(r.reward, r.info.reward_main + r.info.reward_store);
            if agent == MAIN_SEARCH {
                assert_eq!(r.info.reward_store, 0.0);
            } else {
                assert_eq!(r.info.reward_main, 0.0);
            }
            if r.info.purchased {
                let p = &env.catalog()[r.info.clicked.unwrap()];
                assert_eq!(r.reward, p.price);
            } else {
                assert_eq!(r.reward, 0.0);
            }
            assert_eq!(r.terminal, r.next_obs.is_none());
            if r.terminal {
                break;
            }
            obs = r.next_obs.unwrap();
            agent = r.next_agent;
        }
        assert!(steps >= 1 && steps <= cfg.horizon);
        assert!(env.is_done());
        assert!(env.step(&vec![0.0; cfg.action_dim_main]).is_err());
    }
}

fn trajectory(seed: u64, cfg: &SimConfig) -> Vec<(Vec<f64>, f64, usize)> {
    let mut env = MarketEnv::new(cfg.clone()).unwrap();
    let (mut obs, mut agent) = env.reset(seed);
    let mut out = Vec::new();
    loop {
        let a = vec![0.5; cfg.action_dims()[agent]];
        let r = env.step(&a).unwrap();
        out.push((obs, r.reward, agent));
        match r.next_obs {
            Some(o) => {
                obs = o;
                agent = r.next_agent;
            }
            None => return out,
        }
    }
}

#[test]
fn episodes_are_deterministic_in_the_seed() {
    let cfg = SimConfig::default();
    for seed in [0, 1, 99] {
        assert_eq!(trajectory(seed, &cfg), trajectory(seed, &cfg));
    }
    assert_ne!(trajectory(0, &cfg), trajectory(1, &cfg));
}

#[test]
fn observation_layout() {
    let cfg = SimConfig::default();
    let mut env = MarketEnv::new(cfg.clone()).unwrap();
    let (o, _) = env.reset(3);
    let u = cfg.user_dim;
    assert_eq!(&o[..u], env.user().preference.as_slice());
    assert_eq!(o[u], env.user().purchasing_power);
    assert_eq!(&o[u + 1..u + 3], &[1.0, 0.0]);
    assert_eq!(o[u + 3], 0.0);
    let price_mean = env
        .candidates()
        .iter()
        .map(|&j| env.catalog()[j].features[feature::PRICE])
        .sum::<f64>()
        / env.candidates().len() as f64;
    assert!((o[u + 4 + feature::PRICE] - price_mean).abs() < 1e-12);
    assert!(o[cfg.min_obs_dim()..].iter().all(|&v| v == 0.0));
}

#[test]
fn invalid_inputs_are_rejected() {
    let mut env = MarketEnv::new(SimConfig::default()).unwrap();
    assert!(env.step(&[0.0; 6]).is_err(), "step before reset");
    env.reset(0);
    assert!(env.step(&[0.0; 3]).is_err(), "wrong action length");
    let bad = SimConfig {
        obs_dim: 4,
        ..SimConfig::default()
    };
    assert!(MarketEnv::new(bad).is_err());
    let bad = SimConfig {
        kappa: -1.0,
        ..SimConfig::default()
    };
    assert!(MarketEnv::new(bad).is_err());
}
