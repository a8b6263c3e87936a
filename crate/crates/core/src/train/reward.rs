//! Per-step rewards of the shipped environments.

use serde::{Deserialize, Serialize};

/// Angle at which the pendulum reward reaches zero and episodes end.
pub const PENDULUM_THETA_LIMIT: f64 = 0.2;

/// Reward shaping selected by environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Pendulum,
    Shuttle,
    Regulator,
}

impl RewardKind {
    pub fn for_env(id: &str) -> Self {
        match id {
            "cartpole" => RewardKind::Pendulum,
            "shuttle" => RewardKind::Shuttle,
            _ => RewardKind::Regulator,
        }
    }
}

/// Everything a reward may depend on for one transition `x -> x_next`
/// under control `u`.
pub struct Transition<'a> {
    pub x: &'a [f64],
    pub u: &'a [f64],
    pub u_prev: &'a [f64],
    pub x_next: &'a [f64],
    pub is_final: bool,
}

pub fn reward(kind: RewardKind, t: &Transition) -> f64 {
    match kind {
        RewardKind::Pendulum => reward_pendulum(t.x, t.u),
        RewardKind::Shuttle => {
            let (h, hdot) = (t.x_next[0], t.x_next[2] * t.x_next[1].sin());
            reward_shuttle(t.u[0], t.u_prev[0], h, hdot, t.is_final)
        }
        RewardKind::Regulator => -t.x[0] * t.x[0] - 0.01 * t.u.iter().map(|v| v * v).sum::<f64>(),
    }
}

/// `1 - (theta / 0.2)^2 - 0.01 u^2` for cart-pole state `(p, theta, p_dot, theta_dot)`.
pub fn reward_pendulum(x: &[f64], u: &[f64]) -> f64 {
    let ratio = x[1] / PENDULUM_THETA_LIMIT;
    1.0 - ratio * ratio - 0.01 * u.iter().map(|v| v * v).sum::<f64>()
}

/// `-0.2 |a - a_prev|`, minus `|h| + |h_dot|` on the final step.
pub fn reward_shuttle(a: f64, a_prev: f64, h: f64, hdot: f64, is_final: bool) -> f64 {
    let mut r = -0.2 * (a - a_prev).abs();
    if is_final {
        r -= h.abs() + hdot.abs();
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pendulum_values() {
        assert_eq!(reward_pendulum(&[0.0, 0.0, 0.0, 0.0], &[0.0]), 1.0);
        assert!(reward_pendulum(&[0.0, 0.2, 0.0, 0.0], &[0.0]).abs() < 1e-12);
        assert!((reward_pendulum(&[0.0, 0.1, 0.0, 0.0], &[1.0]) - 0.74).abs() < 1e-12);
    }

    #[test]
    fn shuttle_values() {
        assert_eq!(reward_shuttle(0.3, 0.3, 100.0, -50.0, false), 0.0);
        assert_eq!(reward_shuttle(0.3, 0.3, 10.0, -4.0, true), -14.0);
        assert!((reward_shuttle(0.5, 0.0, 0.0, 0.0, false) + 0.1).abs() < 1e-15);
    }
}
