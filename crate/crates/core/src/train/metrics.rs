use std::fmt::Write;

/// One evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub variant: String,
    pub epoch: usize,
    pub episodes_seen: usize,
    pub mean_total_reward: f64,
    pub reward_main: f64,
    pub reward_store: f64,
    /// Exponentially smoothed critic loss; NaN before the first update.
    pub critic_loss: f64,
    pub mean_q: f64,
    /// `[agent][dim]`.
    pub mean_actions: Vec<Vec<f64>>,
}

pub fn metrics_header(action_dims: &[usize]) -> String {
    let mut s = String::from(
        "variant,epoch,episodes_seen,mean_total_reward,reward_main,reward_store,critic_loss,mean_q",
    );
    for (agent, &dim) in action_dims.iter().enumerate() {
        for d in 0..dim {
            let _ = write!(s, ",mean_action_{agent}_{d}");
        }
    }
    s
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "{},{},{},{},{},{},{},{}",
            self.variant,
            self.epoch,
            self.episodes_seen,
            self.mean_total_reward,
            self.reward_main,
            self.reward_store,
            self.critic_loss,
            self.mean_q
        );
        for v in self.mean_actions.iter().flatten() {
            let _ = write!(s, ",{v}");
        }
        s
    }

    /// Parse a line produced by [`MetricsRow::to_csv`].
    pub fn from_csv(line: &str, action_dims: &[usize]) -> Option<Self> {
        let cols: Vec<&str> = line.trim_end().split(',').collect();
        let n_act: usize = action_dims.iter().sum();
        if cols.len() != 8 + n_act {
            return None;
        }
        let f = |i: usize| cols[i].parse::<f64>().ok();
        let mut flat = Vec::with_capacity(n_act);
        for i in 8..cols.len() {
            flat.push(f(i)?);
        }
        let mut mean_actions = Vec::with_capacity(action_dims.len());
        let mut rest = flat.as_slice();
        for &d in action_dims {
            let (head, tail) = rest.split_at(d);
            mean_actions.push(head.to_vec());
            rest = tail;
        }
        Some(Self {
            variant: cols[0].to_string(),
            epoch: cols[1].parse().ok()?,
            episodes_seen: cols[2].parse().ok()?,
            mean_total_reward: f(3)?,
            reward_main: f(4)?,
            reward_store: f(5)?,
            critic_loss: f(6)?,
            mean_q: f(7)?,
            mean_actions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_lists_every_action_dim() {
        let h = metrics_header(&[2, 1]);
        assert!(h.starts_with("variant,epoch,episodes_seen,"));
        assert!(h.ends_with("mean_action_0_0,mean_action_0_1,mean_action_1_0"));
    }

    #[test]
    fn csv_round_trip() {
        let row = MetricsRow {
            variant: "ma_rdpg".into(),
            epoch: 3,
            episodes_seen: 30,
            mean_total_reward: 1.25,
            reward_main: 0.1 + 0.2,
            reward_store: 0.95,
            critic_loss: f64::NAN,
            mean_q: -0.5,
            mean_actions: vec![vec![0.1, -0.2], vec![0.3]],
        };
        let back = MetricsRow::from_csv(&row.to_csv(), &[2, 1]).unwrap();
        assert_eq!(back.to_csv(), row.to_csv());
        assert_eq!(back.reward_main, 0.1 + 0.2);
    }
}
