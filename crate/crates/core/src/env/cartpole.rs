//! Frictionless cart-pole with the pole angle as constrained output.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{Environment, StateBox};
use crate::error::{check_len, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Distance from the pivot to the pole's centre of mass.
    pub half_length: f64,
    pub gravity: f64,
    /// Bound on the control `|u| <= force_limit`.
    pub force_limit: f64,
    /// Actuator gear: the force on the cart is `gear * u`.
    pub gear: f64,
    /// Constraint level `theta <= y_max`.
    pub y_max: f64,
    /// Episodes end once `|theta|` exceeds this.
    pub theta_limit: f64,
    pub dt: f64,
    pub horizon: f64,
    /// Initial-state box over `(p, theta, p_dot, theta_dot)`.
    pub initial: StateBox,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            gravity: 9.8,
            force_limit: 3.0,
            gear: 10.0,
            y_max: 0.2,
            theta_limit: 0.2,
            dt: 0.01,
            horizon: 10.0,
            initial: StateBox {
                low: vec![-0.5, -0.1, -0.5, -0.5],
                high: vec![0.5, 0.15, 0.5, 1.0],
            },
        }
    }
}

/// State `x = (p, theta, p_dot, theta_dot)`, transformed state
/// `s = (theta, theta_dot, p, p_dot)`. Positive control pushes the cart in
/// `+p`, which tips the pole towards negative `theta`.
#[derive(Clone, Debug)]
pub struct CartPole {
    params: CartPoleParams,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Result<Self> {
        let positive = [
            params.cart_mass,
            params.pole_mass,
            params.half_length,
            params.gravity,
            params.force_limit,
            params.gear,
            params.theta_limit,
            params.dt,
            params.horizon,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(
                "cart-pole parameters must be positive and finite".into(),
            ));
        }
        params.initial.validate(4)?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &CartPoleParams {
        &self.params
    }
}

impl Environment for CartPole {
    fn id(&self) -> &str {
        "cartpole"
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn relative_degree(&self) -> usize {
        2
    }

    fn dynamics(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("cart-pole state", x.len(), 4)?;
        check_len("cart-pole control", u.len(), 1)?;
        let p = &self.params;
        let (theta, p_dot, theta_dot) = (x[1], x[2], x[3]);
        let force = p.gear * u[0];
        let total = p.cart_mass + p.pole_mass;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + p.pole_mass * p.half_length * theta_dot * theta_dot * sin) / total;
        let theta_acc = (p.gravity * sin - cos * temp)
            / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total));
        let p_acc = temp - p.pole_mass * p.half_length * theta_acc * cos / total;
        Ok(vec![p_dot, theta_dot, p_acc, theta_acc])
    }

    fn control_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (
            vec![-self.params.force_limit],
            vec![self.params.force_limit],
        )
    }

    fn output_row(&self) -> Vec<f64> {
        vec![0.0, 1.0, 0.0, 0.0]
    }

    fn y_max(&self) -> f64 {
        self.params.y_max
    }

    fn to_s(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("cart-pole state", x.len(), 4)?;
        Ok(vec![x[1], x[3], x[0], x[2]])
    }

    fn from_s(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len("cart-pole transformed state", s.len(), 4)?;
        Ok(vec![s[2], s[0], s[3], s[1]])
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.params.initial.sample(rng)
    }

    fn dt(&self) -> f64 {
        self.params.dt
    }

    fn horizon(&self) -> f64 {
        self.params.horizon
    }

    fn is_terminal(&self, x: &[f64]) -> bool {
        x[1].abs() > self.params.theta_limit
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> CartPole {
        CartPole::new(CartPoleParams::default()).unwrap()
    }

    #[test]
    fn upright_rest_is_equilibrium() {
        assert_eq!(env().dynamics(&[0.0; 4], &[0.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn falling_direction_follows_angle() {
        let e = env();
        assert!(e.dynamics(&[0.0, 0.05, 0.0, 0.0], &[0.0]).unwrap()[3] > 0.0);
        assert!(e.dynamics(&[0.0, -0.05, 0.0, 0.0], &[0.0]).unwrap()[3] < 0.0);
        // pushing the cart forward tips the pole back
        assert!(e.dynamics(&[0.0, 0.0, 0.0, 0.0], &[1.0]).unwrap()[3] < 0.0);
    }

    #[test]
    fn golden_regression_value() {
        // Hand evaluation at theta = 0.1, force = 10:
        // temp = 10 / 1.1; theta_acc = (9.8 sin 0.1 - cos 0.1 temp) / (0.5 (4/3 - 0.1 cos^2 0.1 / 1.1))
        let f = env().dynamics(&[0.0, 0.1, 0.0, 0.0], &[1.0]).unwrap();
        let (s, c) = (0.1f64.sin(), 0.1f64.cos());
        let temp = 10.0 / 1.1;
        let tacc = (9.8 * s - c * temp) / (0.5 * (4.0 / 3.0 - 0.1 * c * c / 1.1));
        let pacc = temp - 0.1 * 0.5 * tacc * c / 1.1;
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], 0.0);
        assert!((f[2] - pacc).abs() < 1e-12);
        assert!((f[3] - tacc).abs() < 1e-12);
        assert!((f[3] - -12.976_640_049_102_327).abs() < 1e-9, "{}", f[3]);
    }

    #[test]
    fn transform_is_a_permutation() {
        let e = env();
        let x = [0.3, -0.1, 0.7, 2.0];
        let s = e.to_s(&x).unwrap();
        assert_eq!(s, vec![-0.1, 2.0, 0.3, 0.7]);
        assert_eq!(e.from_s(&s).unwrap(), x.to_vec());
        assert_eq!(e.output(&x), s[0]);
    }
}
