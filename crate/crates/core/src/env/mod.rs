//! Continuous-time control systems, consumed only through evaluation of their
//! vector field and the coordinate change `s = T(x)`.

mod cartpole;
mod double_integrator;
mod shuttle;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::police::Policy;

pub use cartpole::{CartPole, CartPoleParams};
pub use double_integrator::{DoubleIntegrator, DoubleIntegratorParams};
pub use shuttle::{Shuttle, ShuttleParams};

/// Default time step of the finite-difference micro-rollouts in [`f_tilde_r`].
pub const F_TILDE_STEP: f64 = 1e-4;

/// A deterministic system `x' = f(x, u)` with a scalar output `y = C x` of
/// known relative degree and an invertible change of coordinates `s = T(x)`
/// whose first `r` entries are `y, y', ..., y^(r-1)`.
pub trait Environment: Send + Sync {
    fn id(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn relative_degree(&self) -> usize;
    fn dynamics(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>>;
    /// Control box `(low, high)`.
    fn control_bounds(&self) -> (Vec<f64>, Vec<f64>);
    /// Output row `C` with `y = C x`.
    fn output_row(&self) -> Vec<f64>;
    fn y_max(&self) -> f64;
    fn to_s(&self, x: &[f64]) -> Result<Vec<f64>>;
    #[allow(clippy::wrong_self_convention)]
    fn from_s(&self, s: &[f64]) -> Result<Vec<f64>>;
    fn sample_initial(&self, rng: &mut dyn RngCore) -> Vec<f64>;
    /// Integration step in seconds.
    fn dt(&self) -> f64;
    /// Episode length in seconds.
    fn horizon(&self) -> f64;
    fn is_terminal(&self, x: &[f64]) -> bool;

    fn output(&self, x: &[f64]) -> f64 {
        self.output_row().iter().zip(x).map(|(c, v)| c * v).sum()
    }

    fn clip_control(&self, u: &[f64]) -> Vec<f64> {
        let (low, high) = self.control_bounds();
        u.iter()
            .zip(low.iter().zip(&high))
            .map(|(v, (l, h))| v.clamp(*l, *h))
            .collect()
    }
}

/// Axis-aligned box of initial states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateBox {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl StateBox {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.low.len() != n || self.high.len() != n {
            return Err(Error::Config(format!(
                "initial-state box must have {n} entries per bound"
            )));
        }
        if self.low.iter().zip(&self.high).any(|(l, h)| !(l <= h)) {
            return Err(Error::Config("initial-state box needs low <= high".into()));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.low
            .iter()
            .zip(&self.high)
            .map(|(l, h)| l + (h - l) * unit(rng))
            .collect()
    }
}

/// Uniform draw in `[0, 1)` from the top 53 bits of a `u64`.
pub(crate) fn unit(rng: &mut dyn RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// One classical Runge-Kutta step with the control held constant.
pub fn rk4_step(env: &dyn Environment, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Integration(format!(
            "step must be positive, got {dt}"
        )));
    }
    rk4_signed(env, x, u, dt)
}

fn rk4_signed(env: &dyn Environment, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
    check_len("state", x.len(), env.state_dim())?;
    check_len("control", u.len(), env.action_dim())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration("non-finite state".into()));
    }
    let shifted =
        |k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    let k1 = env.dynamics(x, u)?;
    let k2 = env.dynamics(&shifted(&k1, dt / 2.0), u)?;
    let k3 = env.dynamics(&shifted(&k2, dt / 2.0), u)?;
    let k4 = env.dynamics(&shifted(&k3, dt), u)?;
    let next: Vec<f64> = (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration("state became non-finite".into()));
    }
    Ok(next)
}

/// `y^(r)` at transformed state `s` under the fixed control `u`: central
/// difference of `s_r` along short forward and backward rollouts.
pub fn f_tilde_r_with_control(
    env: &dyn Environment,
    s: &[f64],
    u: &[f64],
    delta: f64,
) -> Result<f64> {
    let r = env.relative_degree();
    let x = env.from_s(s)?;
    let forward = env.to_s(&rk4_signed(env, &x, u, delta)?)?;
    let backward = env.to_s(&rk4_signed(env, &x, u, -delta)?)?;
    Ok((forward[r - 1] - backward[r - 1]) / (2.0 * delta))
}

/// `y^(r)` at `s` under the closed loop `u = clip(policy(s))`.
pub fn f_tilde_r(env: &dyn Environment, policy: &dyn Policy, s: &[f64], delta: f64) -> Result<f64> {
    let u = env.clip_control(&policy.act(s)?);
    f_tilde_r_with_control(env, s, &u, delta)
}

/// A sampled closed-loop trajectory. `controls[i]` is the control applied
/// from `times[i]`; the last row holds the policy's action at the final state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states_x: Vec<Vec<f64>>,
    pub states_s: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push(&mut self, env: &dyn Environment, t: f64, x: Vec<f64>, u: Vec<f64>) -> Result<()> {
        let s = env.to_s(&x)?;
        self.outputs.push(env.output(&x));
        self.times.push(t);
        self.states_x.push(x);
        self.states_s.push(s);
        self.controls.push(u);
        Ok(())
    }

    /// CSV with header `t,x1..xn,s1..sn,u1..um,y`.
    pub fn to_csv(&self, n: usize, m: usize) -> String {
        let mut out = trajectory_csv_header(n, m);
        for i in 0..self.len() {
            let mut row = vec![fmt(self.times[i])];
            row.extend(self.states_x[i].iter().map(|v| fmt(*v)));
            row.extend(self.states_s[i].iter().map(|v| fmt(*v)));
            row.extend(self.controls[i].iter().map(|v| fmt(*v)));
            row.push(fmt(self.outputs[i]));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn trajectory_csv_header(n: usize, m: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("x{i}")));
    cols.extend((1..=n).map(|i| format!("s{i}")));
    cols.extend((1..=m).map(|i| format!("u{i}")));
    cols.push("y".into());
    cols.join(",") + "\n"
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Runs the closed loop `u = clip(policy(T(x)))` from `x0` until the horizon
/// or a terminal state.
pub fn rollout(env: &dyn Environment, policy: &dyn Policy, x0: &[f64]) -> Result<Trajectory> {
    let dt = env.dt();
    let steps = (env.horizon() / dt).round() as usize;
    let mut traj = Trajectory::default();
    let mut x = x0.to_vec();
    for k in 0..=steps {
        let s = env.to_s(&x)?;
        let u = env.clip_control(&policy.act(&s)?);
        let t = k as f64 * dt;
        let done = k == steps || env.is_terminal(&x);
        traj.push(env, t, x.clone(), u.clone())?;
        if done {
            break;
        }
        x = rk4_step(env, &x, &u, dt)?;
    }
    Ok(traj)
}

/// Environments selectable by id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Cartpole(CartPoleParams),
    Shuttle(ShuttleParams),
    DoubleIntegrator(DoubleIntegratorParams),
}

impl EnvConfig {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvConfig::Cartpole(p) => Box::new(CartPole::new(p.clone())?),
            EnvConfig::Shuttle(p) => Box::new(Shuttle::new(p.clone())?),
            EnvConfig::DoubleIntegrator(p) => Box::new(DoubleIntegrator::new(p.clone())?),
        })
    }
}
