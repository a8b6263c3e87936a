//! Longitudinal space-shuttle glide with the angle of attack as control and
//! `y = -h <= 0` as the constrained output.

use std::f64::consts::PI;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{Environment, StateBox};
use crate::error::{check_len, Error, Result};

/// Smallest `|sin gamma|` for which the flight speed can be recovered from the
/// vertical speed.
const MIN_SIN_GAMMA: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShuttleParams {
    /// Surface area over mass, ft^2/slug.
    pub s_over_m: f64,
    /// Lift coefficient scale.
    pub c_l0: f64,
    /// Zero-lift drag coefficient.
    pub c_d0: f64,
    /// Lift-induced drag factor.
    pub k: f64,
    /// Sea-level air density, slug/ft^3.
    pub rho0: f64,
    /// ft/s^2.
    pub g: f64,
    /// Density scale height, ft.
    pub scale_height: f64,
    /// Upper bound on the angle of attack, rad.
    pub alpha_max: f64,
    pub dt: f64,
    pub horizon: f64,
    /// Initial-state box over `(h, gamma, v)`.
    pub initial: StateBox,
}

impl Default for ShuttleParams {
    fn default() -> Self {
        Self {
            s_over_m: 0.9118,
            c_l0: 2.3,
            c_d0: 0.0975,
            k: 0.1819,
            rho0: 0.0027,
            g: 32.174,
            scale_height: 27890.0,
            alpha_max: PI / 3.0,
            dt: 0.05,
            horizon: 60.0,
            initial: StateBox {
                low: vec![500.0, (-30.0f64).to_radians(), 300.0],
                high: vec![500.0, (-10.0f64).to_radians(), 400.0],
            },
        }
    }
}

/// State `x = (h, gamma, v)`; transformed state `s = (-h, -v sin gamma, gamma)`
/// so that `s1 = y` and `s2 = y'`.
#[derive(Clone, Debug)]
pub struct Shuttle {
    params: ShuttleParams,
}

impl Shuttle {
    pub fn new(params: ShuttleParams) -> Result<Self> {
        let positive = [
            params.s_over_m,
            params.c_l0,
            params.c_d0,
            params.k,
            params.rho0,
            params.g,
            params.scale_height,
            params.alpha_max,
            params.dt,
            params.horizon,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(
                "shuttle parameters must be positive and finite".into(),
            ));
        }
        params.initial.validate(3)?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &ShuttleParams {
        &self.params
    }

    /// `(C_L, C_D)` at angle of attack `alpha`.
    pub fn coefficients(&self, alpha: f64) -> (f64, f64) {
        let p = &self.params;
        let (sin, cos) = alpha.sin_cos();
        let cl = p.c_l0 * sin * sin * cos;
        (cl, p.c_d0 + p.k * cl * cl)
    }

    pub fn air_density(&self, h: f64) -> f64 {
        self.params.rho0 * (-h / self.params.scale_height).exp()
    }
}

impl Environment for Shuttle {
    fn id(&self) -> &str {
        "shuttle"
    }

    fn state_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn relative_degree(&self) -> usize {
        2
    }

    fn dynamics(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("shuttle state", x.len(), 3)?;
        check_len("shuttle control", u.len(), 1)?;
        let (h, gamma, v) = (x[0], x[1], x[2]);
        if !(v > 0.0) {
            return Err(Error::InvalidState(format!(
                "shuttle speed must be positive, got {v}"
            )));
        }
        let p = &self.params;
        let rho = self.air_density(h);
        let (cl, cd) = self.coefficients(u[0]);
        let (sin, cos) = gamma.sin_cos();
        let half_s_over_m = 0.5 * p.s_over_m;
        Ok(vec![
            v * sin,
            rho * v * cl * half_s_over_m - p.g * cos / v,
            -rho * v * v * cd * half_s_over_m - p.g * sin,
        ])
    }

    fn control_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0], vec![self.params.alpha_max])
    }

    fn output_row(&self) -> Vec<f64> {
        vec![-1.0, 0.0, 0.0]
    }

    fn y_max(&self) -> f64 {
        0.0
    }

    fn to_s(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("shuttle state", x.len(), 3)?;
        Ok(vec![-x[0], -x[2] * x[1].sin(), x[1]])
    }

    fn from_s(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len("shuttle transformed state", s.len(), 3)?;
        let sin = s[2].sin();
        if sin.abs() < MIN_SIN_GAMMA {
            return Err(Error::Domain(format!(
                "flight path angle {} is too close to level to recover the speed",
                s[2]
            )));
        }
        let v = -s[1] / sin;
        if !(v > 0.0) {
            return Err(Error::Domain(format!(
                "vertical speed {} and flight path angle {} give non-positive speed",
                -s[1], s[2]
            )));
        }
        Ok(vec![-s[0], s[2], v])
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
        x[0] <= 0.0 || !(x[2] > 0.0)
    }
}
