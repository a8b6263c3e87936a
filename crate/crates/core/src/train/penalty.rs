//! Vertex penalties that steer training towards a certifiable policy.

use crate::buffer::BufferSpec;
use crate::env::{f_tilde_r_with_control, Environment, F_TILDE_STEP};
use crate::error::Result;
use crate::nn::{GradTape, OutputActivation};
use crate::police::PolicedPolicy;

/// Control step of the finite difference `d y^(r) / d u`.
pub const CONTROL_FD_STEP: f64 = 1e-4;

/// Penalty value with its gradient over the policy network parameters.
pub struct PenaltyGrad {
    pub value: f64,
    pub grad: GradTape,
    /// Smallest `-2 eps - beta v_r - y^(r)(v)` over the vertices.
    pub min_margin: f64,
}

/// `sum_v max(0, y^(r)(v) + 2 eps + beta v_r)^2`.
pub fn dissipation_penalty(
    policy: &PolicedPolicy,
    spec: &BufferSpec,
    env: &dyn Environment,
    eps: f64,
) -> Result<f64> {
    Ok(dissipation_penalty_grad(policy, spec, env, eps, 0.0)?.value)
}

/// Dissipation penalty with an extra `margin` inside the hinge, and its
/// gradient by the chain rule through the raw policy output, with
/// `d y^(r) / d u` from a central difference.
pub fn dissipation_penalty_grad(
    policy: &PolicedPolicy,
    spec: &BufferSpec,
    env: &dyn Environment,
    eps: f64,
    margin: f64,
) -> Result<PenaltyGrad> {
    let beta = spec.beta()?;
    let r = spec.r;
    let m = env.action_dim();
    let mut grad = GradTape::zeros_like(&policy.net);
    let mut value = 0.0;
    let mut min_margin = f64::INFINITY;
    for v in &policy.region_vertices {
        let z = policy.scaling.apply(&v.s);
        let trace = policy.net.forward_trace(&z)?;
        let raw = trace
            .pre_activations
            .last()
            .expect("network has layers")
            .clone();
        let u = env.clip_control(&raw);
        let f = f_tilde_r_with_control(env, &v.s, &u, F_TILDE_STEP)?;
        let excess = f + 2.0 * eps + beta * v.s[r - 1];
        min_margin = min_margin.min(-excess);
        let hinge = excess + margin;
        if hinge <= 0.0 {
            continue;
        }
        value += hinge * hinge;
        let mut upstream = vec![0.0; m];
        for j in 0..m {
            let mut up = u.clone();
            let mut down = u.clone();
            up[j] += CONTROL_FD_STEP;
            down[j] -= CONTROL_FD_STEP;
            let df = (f_tilde_r_with_control(env, &v.s, &up, F_TILDE_STEP)?
                - f_tilde_r_with_control(env, &v.s, &down, F_TILDE_STEP)?)
                / (2.0 * CONTROL_FD_STEP);
            upstream[j] = 2.0 * hinge * df;
        }
        policy
            .net
            .backward_raw_from_trace(&trace, &upstream, &mut grad)?;
    }
    Ok(PenaltyGrad {
        value,
        grad,
        min_margin,
    })
}

/// `sum_v sum_j hinge^2` of the raw output leaving the clamp box shrunk by
/// `inset` on each side, with its gradient.
pub fn control_bound_penalty_grad(policy: &PolicedPolicy, inset: f64) -> Result<(f64, GradTape)> {
    let mut grad = GradTape::zeros_like(&policy.net);
    let OutputActivation::Clamp { low, high } = policy.net.output_activation() else {
        return Ok((0.0, grad));
    };
    let mut value = 0.0;
    for v in &policy.region_vertices {
        let z = policy.scaling.apply(&v.s);
        let trace = policy.net.forward_trace(&z)?;
        let raw = trace.pre_activations.last().expect("network has layers");
        let mut upstream = vec![0.0; raw.len()];
        let mut any = false;
        for j in 0..raw.len() {
            let width = high[j] - low[j];
            let (lo, hi) = (low[j] + inset * width, high[j] - inset * width);
            let excess = if raw[j] > hi {
                raw[j] - hi
            } else if raw[j] < lo {
                raw[j] - lo
            } else {
                0.0
            };
            if excess != 0.0 {
                value += excess * excess;
                upstream[j] = 2.0 * excess;
                any = true;
            }
        }
        if any {
            policy
                .net
                .backward_raw_from_trace(&trace, &upstream, &mut grad)?;
        }
    }
    Ok((value, grad))
}
