//! Summaries computed from metrics rows.

use mardpg_core::train::MetricsRow;

/// First-quarter versus final-quarter behaviour of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Stabilization {
    pub loss_first_quarter: f64,
    pub loss_final_quarter: f64,
    /// Population standard deviation of each (agent, dim) mean-action series
    /// over the first and final quarter; dimensions that never move are left out.
    pub action_std_first: Vec<f64>,
    pub action_std_final: Vec<f64>,
    /// `(agent, dim)` of each entry in the two lists above.
    pub action_dims: Vec<(usize, usize)>,
}

impl Stabilization {
    pub fn loss_ratio(&self) -> f64 {
        self.loss_final_quarter / self.loss_first_quarter
    }

    pub fn action_ratios(&self) -> Vec<f64> {
        self.action_std_final
            .iter()
            .zip(&self.action_std_first)
            .map(|(b, a)| b / a)
            .collect()
    }

    /// Mean of the per-dimension final/first standard-deviation ratios.
    pub fn action_ratio(&self) -> f64 {
        let r = self.action_ratios();
        if r.is_empty() {
            return f64::NAN;
        }
        r.iter().sum::<f64>() / r.len() as f64
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn std(xs: &[f64]) -> f64 {
    let m = mean(xs.iter().copied());
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// `None` with fewer than four rows.
pub fn stabilization(rows: &[MetricsRow]) -> Option<Stabilization> {
    let q = rows.len() / 4;
    if q == 0 {
        return None;
    }
    let (first, last) = (&rows[..q], &rows[rows.len() - q..]);
    let mut action_std_first = Vec::new();
    let mut action_std_final = Vec::new();
    let mut action_dims = Vec::new();
    for (agent, dims) in rows[0].mean_actions.iter().enumerate() {
        for d in 0..dims.len() {
            let a: Vec<f64> = first.iter().map(|r| r.mean_actions[agent][d]).collect();
            let b: Vec<f64> = last.iter().map(|r| r.mean_actions[agent][d]).collect();
            let sa = std(&a);
            if sa > 0.0 {
                action_std_first.push(sa);
                action_std_final.push(std(&b));
                action_dims.push((agent, d));
            }
        }
    }
    Some(Stabilization {
        loss_first_quarter: mean(first.iter().map(|r| r.critic_loss)),
        loss_final_quarter: mean(last.iter().map(|r| r.critic_loss)),
        action_std_first,
        action_std_final,
        action_dims,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize, loss: f64, a: f64) -> MetricsRow {
        MetricsRow {
            variant: "x".into(),
            epoch,
            episodes_seen: 0,
            mean_total_reward: 0.0,
            reward_main: 0.0,
            reward_store: 0.0,
            critic_loss: loss,
            mean_q: 0.0,
            mean_actions: vec![vec![a, 0.5]],
        }
    }

    #[test]
    fn quarters() {
        let rows: Vec<MetricsRow> = [(f64::NAN, 0.0), (4.0, 1.0), (2.0, 0.5), (1.0, 0.5)]
            .iter()
            .enumerate()
            .map(|(i, &(l, a))| row(i, l, a))
            .collect();
        let s = stabilization(&rows).unwrap();
        assert!(s.loss_first_quarter.is_nan());
        assert_eq!(s.loss_final_quarter, 1.0);
        // Single-row quarters have zero spread, so every dimension is skipped.
        assert!(s.action_ratio().is_nan());

        let rows: Vec<MetricsRow> = [
            (4.0, 0.0),
            (4.0, 1.0),
            (2.0, 0.4),
            (1.0, 0.6),
            (1.0, 0.5),
            (1.0, 0.5),
            (1.0, 0.5),
            (1.0, 0.6),
        ]
        .iter()
        .enumerate()
        .map(|(i, &(l, a))| row(i, l, a))
        .collect();
        let s = stabilization(&rows).unwrap();
        assert_eq!(s.loss_ratio(), 0.25);
        assert_eq!(s.action_std_first.len(), 1);
        assert_eq!(s.action_dims, vec![(0, 0)]);
        assert!((s.action_ratio() - 0.1).abs() < 1e-12);
    }
}
