//! Fixtures shared by the benchmarks.

use mardpg_core::baselines::Variant;
use mardpg_core::env::SimConfig;
use mardpg_core::train::{TrainConfig, Trainer};

/// A trainer whose replay buffer already holds enough episodes for a minibatch.
pub fn warm_trainer(variant: Variant) -> Trainer {
    let cfg = TrainConfig {
        epochs: 10,
        eval_interval: 1_000,
        minibatches_per_epoch: 0,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(variant, SimConfig::default(), cfg).expect("default config is valid");
    for _ in 0..t.train_config().batch_size {
        t.collect(0.3).expect("collection succeeds");
    }
    t
}
