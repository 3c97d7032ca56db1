//! Comparison points that share the training machinery: independent
//! per-scenario learners and a main-search learner with a fixed store ranker.

use crate::error::{Error, Result};

/// Store-search ranking weight used by the equal-weight baseline, on every dimension.
pub const EQUAL_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Joint training with a shared critic and communication module.
    MaRdpg,
    /// One learner per scenario, zero messages, own-scenario rewards.
    Independent,
    /// Main search trained on total reward; store search fixed to equal weights.
    MainOnlyEw,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::MaRdpg, Variant::Independent, Variant::MainOnlyEw];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::MaRdpg => "ma_rdpg",
            Variant::Independent => "independent",
            Variant::MainOnlyEw => "main_only_ew",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }

    pub fn code(self) -> u8 {
        match self {
            Variant::MaRdpg => 0,
            Variant::Independent => 1,
            Variant::MainOnlyEw => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.code() == code)
            .ok_or_else(|| Error::Integrity(format!("unknown variant code {code}")))
    }

    pub fn uses_communication(self) -> bool {
        self == Variant::MaRdpg
    }
}

/// Equal-weight action with every entry [`EQUAL_WEIGHT`], so `‖a‖_∞ = 0.5`.
pub fn equal_weight_action(dim: usize) -> Vec<f64> {
    vec![EQUAL_WEIGHT; dim]
}

/// One-sided exact sign test: probability of at least `wins` successes out of
/// `wins + losses` fair coin flips. Ties are dropped by the caller.
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in wins..=n {
        p += binomial(n, k) * 0.5f64.powi(n as i32);
    }
    p.min(1.0)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Wins, losses and ties of `a` over `b`, pairwise.
pub fn paired_outcomes(a: &[f64], b: &[f64]) -> (usize, usize, usize) {
    a.iter().zip(b).fold((0, 0, 0), |(w, l, t), (x, y)| {
        if x > y {
            (w + 1, l, t)
        } else if x < y {
            (w, l + 1, t)
        } else {
            (w, l, t + 1)
        }
    })
}
