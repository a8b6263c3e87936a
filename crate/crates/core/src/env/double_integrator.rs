//! `y'' = u`, the simplest system of relative degree two, and its longer
//! integrator chains `y^(r) = u`.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{Environment, StateBox};
use crate::error::{check_len, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DoubleIntegratorParams {
    /// Chain length `r` in `y^(r) = u`; 2 is the double integrator.
    pub order: usize,
    pub y_max: f64,
    /// Bound on the control `|u| <= control_limit`.
    pub control_limit: f64,
    pub dt: f64,
    pub horizon: f64,
    /// Initial-state box over `(y, y', ..., y^(r-1))`.
    pub initial: StateBox,
}

impl Default for DoubleIntegratorParams {
    fn default() -> Self {
        Self {
            order: 2,
            y_max: 1.0,
            control_limit: 10.0,
            dt: 0.01,
            horizon: 3.0,
            initial: StateBox {
                low: vec![-0.5, 0.0],
                high: vec![0.9, 2.5],
            },
        }
    }
}

/// State `x = s = (y, y', ..., y^(r-1))`.
#[derive(Clone, Debug)]
pub struct DoubleIntegrator {
    params: DoubleIntegratorParams,
}

impl DoubleIntegrator {
    pub fn new(params: DoubleIntegratorParams) -> Result<Self> {
        let positive = [params.control_limit, params.dt, params.horizon];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !params.y_max.is_finite() {
            return Err(Error::Config(
                "double-integrator parameters must be positive and finite".into(),
            ));
        }
        if params.order < 2 {
            return Err(Error::Config(format!(
                "integrator order must be >= 2, got {}",
                params.order
            )));
        }
        params.initial.validate(params.order)?;
        Ok(Self { params })
    }
}

impl Environment for DoubleIntegrator {
    fn id(&self) -> &str {
        "double_integrator"
    }

    fn state_dim(&self) -> usize {
        self.params.order
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn relative_degree(&self) -> usize {
        self.params.order
    }

    fn dynamics(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("double-integrator state", x.len(), self.params.order)?;
        check_len("double-integrator control", u.len(), 1)?;
        let mut dx = x[1..].to_vec();
        dx.push(u[0]);
        Ok(dx)
    }

    fn control_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (
            vec![-self.params.control_limit],
            vec![self.params.control_limit],
        )
    }

    fn output_row(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.params.order];
        c[0] = 1.0;
        c
    }

    fn y_max(&self) -> f64 {
        self.params.y_max
    }

    fn to_s(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("double-integrator state", x.len(), self.params.order)?;
        Ok(x.to_vec())
    }

    fn from_s(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len("double-integrator state", s.len(), self.params.order)?;
        Ok(s.to_vec())
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

    fn is_terminal(&self, _x: &[f64]) -> bool {
        false
    }
}
