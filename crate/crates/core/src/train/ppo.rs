//! Generalized advantage estimation and the diagonal Gaussian policy head.

use std::f64::consts::PI;

/// Advantages of one episode. `values` has one more entry than `rewards`:
/// the bootstrap value of the state after the last reward (0 if terminal).
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(
        values.len(),
        rewards.len() + 1,
        "values need a trailing bootstrap entry"
    );
    let mut adv = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    adv
}

/// Log-density of `a` under `N(mean, exp(log_std)^2)` with independent entries.
pub fn gaussian_log_prob(a: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    a.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// Gradients of the log-density with respect to the mean and the log std.
pub fn gaussian_log_prob_grad(a: &[f64], mean: &[f64], log_std: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut d_mean = Vec::with_capacity(a.len());
    let mut d_log_std = Vec::with_capacity(a.len());
    for ((a, m), ls) in a.iter().zip(mean).zip(log_std) {
        let var = (2.0 * ls).exp();
        d_mean.push((a - m) / var);
        d_log_std.push((a - m) * (a - m) / var - 1.0);
    }
    (d_mean, d_log_std)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gae_hand_recursion() {
        assert_eq!(gae(&[1.0, 1.0], &[0.0, 0.0, 0.0], 1.0, 1.0), vec![2.0, 1.0]);
        assert_eq!(
            gae(&[0.0, 0.0], &[0.0, 0.0, 0.0], 0.99, 0.95),
            vec![0.0, 0.0]
        );
        let adv = gae(&[1.0, 2.0], &[0.5, 0.25, 1.0], 0.9, 0.0);
        assert!((adv[0] - (1.0 + 0.9 * 0.25 - 0.5)).abs() < 1e-15);
        assert!((adv[1] - (2.0 + 0.9 * 1.0 - 0.25)).abs() < 1e-15);
    }

    #[test]
    fn log_prob_matches_formula_and_gradient() {
        let (a, m, ls) = ([0.3, -1.0], [0.1, 0.5], [-0.2, 0.4]);
        let lp = gaussian_log_prob(&a, &m, &ls);
        let (dm, dls) = gaussian_log_prob_grad(&a, &m, &ls);
        let h = 1e-6;
        for i in 0..2 {
            let mut mp = m;
            mp[i] += h;
            let mut mm = m;
            mm[i] -= h;
            let fd =
                (gaussian_log_prob(&a, &mp, &ls) - gaussian_log_prob(&a, &mm, &ls)) / (2.0 * h);
            assert!((fd - dm[i]).abs() < 1e-6);
            let mut lp_ = ls;
            lp_[i] += h;
            let mut lm = ls;
            lm[i] -= h;
            let fd = (gaussian_log_prob(&a, &m, &lp_) - gaussian_log_prob(&a, &m, &lm)) / (2.0 * h);
            assert!((fd - dls[i]).abs() < 1e-6);
        }
        assert!(lp.is_finite());
    }
}
