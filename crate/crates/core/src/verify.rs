//! Vertex certificates for the dissipation condition and trajectory monitors.
//!
//! A policy that is affine on the buffer and satisfies
//! `y^(r)(v) <= -2 eps - beta v_r` at every vertex keeps every trajectory that
//! enters the buffer strictly below its upper bound from crossing it while the
//! trajectory stays above the lower bounds. [`verify_dissipation`] checks the
//! vertex condition; [`check_trajectory`] checks the conclusion on sampled
//! trajectories.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::approx::ApproxMeasure;
use crate::buffer::BufferSpec;
use crate::env::{f_tilde_r_with_control, Environment, Trajectory, F_TILDE_STEP};
use crate::error::Result;
use crate::police::{extract_affine_map, PolicedPolicy};

pub const CERTIFICATE_VERSION: u32 = 1;

/// Slack applied to strict inequalities on sampled states.
pub const STRICT_SLACK: f64 = 1e-9;

/// Per-step overshoot, relative to `max(1, |upper|_inf)`, attributed to the
/// integrator rather than to the policy.
pub const OVERSHOOT_TOL: f64 = 1e-6;

/// Tolerance on the raw policy output leaving the control box at a vertex.
const CONTROL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexRecord {
    pub s: Vec<f64>,
    pub u: Vec<f64>,
    pub f_tilde: Option<f64>,
    /// `-2 eps - beta v_r`.
    pub threshold: f64,
    /// `threshold - f_tilde`; non-negative when the vertex passes.
    pub margin: Option<f64>,
    /// Whether the policy output lies in the control box, so that the applied
    /// control is the affine one.
    pub control_ok: bool,
    pub pass: bool,
    pub cause: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub version: u32,
    pub env: String,
    pub beta: f64,
    pub eps: ApproxMeasure,
    pub vertices: Vec<VertexRecord>,
    /// `"pass"` or `"fail"`.
    pub verdict: String,
    pub dtheta: Vec<Vec<f64>>,
    pub etheta: Vec<f64>,
    pub notes: Vec<String>,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.verdict == "pass"
    }

    pub fn min_margin(&self) -> Option<f64> {
        self.vertices
            .iter()
            .filter_map(|v| v.margin)
            .reduce(f64::min)
    }
}

/// SHA-256 of the policy's JSON form.
pub fn policy_hash(policy: &PolicedPolicy) -> Result<String> {
    let json = policy.to_json()?;
    Ok(hex::encode(Sha256::digest(json.as_bytes())))
}

/// Checks the dissipation condition at every buffer vertex.
pub fn verify_dissipation(
    env: &dyn Environment,
    policy: &PolicedPolicy,
    spec: &BufferSpec,
    eps: &ApproxMeasure,
) -> Result<Certificate> {
    let beta = spec.beta()?;
    let r = spec.r;
    let vertices = spec.enumerate_vertices()?;
    let (low, high) = env.control_bounds();
    let mut notes = vec![format!("policy_sha256={}", policy_hash(policy)?)];
    if env.id() == "shuttle" {
        notes.push("gravity taken as 32.174 ft/s^2".into());
    }
    if let Some(h) = eps.holdout_max_residual {
        if h > eps.eps {
            notes.push(format!(
                "holdout residual {h:e} exceeds eps {:e}: certificate weakened",
                eps.eps
            ));
        }
    }
    let report = spec.validate_lower_bounds();
    for c in report.violations() {
        notes.push(format!(
            "lower bound of s{} ({}) is above {}; trajectories can leave through it",
            c.index, c.value, c.required_max
        ));
    }

    let (dtheta, etheta, affine_ok) = match extract_affine_map(policy) {
        Ok(map) => (map.d, map.e, true),
        Err(e) => {
            notes.push(format!("policy is not affine on the buffer: {e}"));
            (Vec::new(), Vec::new(), false)
        }
    };

    let mut records = Vec::with_capacity(vertices.len());
    for v in &vertices {
        let threshold = -2.0 * eps.eps - beta * v.s[r - 1];
        let raw = policy.act_raw(&v.s)?;
        let control_ok = raw
            .iter()
            .zip(low.iter().zip(&high))
            .all(|(u, (l, h))| *u >= l - CONTROL_TOL && *u <= h + CONTROL_TOL);
        let u = env.clip_control(&raw);
        let record = match f_tilde_r_with_control(env, &v.s, &u, F_TILDE_STEP) {
            Ok(f) => {
                let margin = threshold - f;
                let mut cause = None;
                if !control_ok {
                    cause = Some("policy output outside the control box".to_string());
                } else if margin < 0.0 {
                    cause = Some("dissipation condition violated".to_string());
                }
                VertexRecord {
                    s: v.s.clone(),
                    u,
                    f_tilde: Some(f),
                    threshold,
                    margin: Some(margin),
                    control_ok,
                    pass: margin >= 0.0 && control_ok,
                    cause,
                }
            }
            Err(e) => VertexRecord {
                s: v.s.clone(),
                u,
                f_tilde: None,
                threshold,
                margin: None,
                control_ok,
                pass: false,
                cause: Some(e.to_string()),
            },
        };
        records.push(record);
    }
    let pass = affine_ok && records.iter().all(|r| r.pass);
    Ok(Certificate {
        version: CERTIFICATE_VERSION,
        env: env.id().to_string(),
        beta,
        eps: eps.clone(),
        vertices: records,
        verdict: if pass { "pass" } else { "fail" }.into(),
        dtheta,
        etheta,
        notes,
    })
}

/// Why a monitored buffer segment ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExitReason {
    /// `s_index` dropped below its lower bound (1-based index).
    LowerBound { index: usize },
    /// The non-output coordinates left their polytope.
    Aux,
    /// The trajectory ended inside the buffer.
    End,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub time: f64,
    pub step: usize,
    /// `"upper_bound"` or `"constraint"`.
    pub kind: String,
    /// 1-based coordinate for upper-bound violations, 1 for the constraint.
    pub coordinate: usize,
    pub value: f64,
    pub bound: f64,
    pub excess: f64,
}

/// One stretch `[t0, t1)` during which the trajectory is inside the buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    pub start_step: usize,
    /// First step outside the segment (or the trajectory length).
    pub end_step: usize,
    pub exit: ExitReason,
    /// State at the exit step, if any.
    pub exit_state: Option<Vec<f64>>,
    /// Smallest `upper_k(s) - s_k` over the segment.
    pub min_upper_slack: f64,
    pub max_y: f64,
    /// Smallest `envelope - y` along the segment.
    pub min_envelope_slack_y: f64,
    /// Smallest `envelope_k - y^(k)` for `k = 1..r-1`.
    pub min_envelope_slack_derivs: Vec<f64>,
    /// Largest step-averaged `s_r' + beta s_r`; non-positive when the
    /// dissipation inequality holds inside the buffer.
    pub max_dissipation_excess: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub entered: bool,
    pub segments: Vec<Segment>,
    pub violations: Vec<Violation>,
    /// Excursions within the integrator tolerance.
    pub overshoots: Vec<Violation>,
}

impl TrajectoryReport {
    pub fn is_safe(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Monitors every buffer entry of `traj`: from the first step that is in the
/// buffer and strictly below its upper bound, as long as the lower bounds and
/// the auxiliary polytope hold, the upper bound and `y <= y_max` must hold.
pub fn check_trajectory(traj: &Trajectory, spec: &BufferSpec) -> TrajectoryReport {
    let mut report = TrajectoryReport::default();
    let beta = spec.beta().unwrap_or(f64::NAN);
    let r = spec.r;
    let states = &traj.states_s;
    let mut i = 0;
    while i < states.len() {
        let s = &states[i];
        if !(spec.contains(s) && spec.strictly_below_upper(s)) {
            i += 1;
            continue;
        }
        report.entered = true;
        let start = i;
        let t0 = traj.times[start];
        let s0 = states[start].clone();
        let mut segment = Segment {
            t0,
            t1: t0,
            start_step: start,
            end_step: states.len(),
            exit: ExitReason::End,
            exit_state: None,
            min_upper_slack: f64::INFINITY,
            max_y: f64::NEG_INFINITY,
            min_envelope_slack_y: f64::INFINITY,
            min_envelope_slack_derivs: vec![f64::INFINITY; r - 1],
            max_dissipation_excess: f64::NEG_INFINITY,
        };
        let mut j = start;
        while j < states.len() {
            let s = &states[j];
            if let Some(reason) = exit_reason(spec, s) {
                segment.exit = reason;
                segment.exit_state = Some(s.clone());
                segment.end_step = j;
                break;
            }
            let t = traj.times[j];
            let upper = spec.upper_bound(s);
            let scale = upper.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for k in 0..r {
                let excess = s[k] - upper[k];
                segment.min_upper_slack = segment.min_upper_slack.min(-excess);
                classify(&mut report, excess, scale, || Violation {
                    time: t,
                    step: j,
                    kind: "upper_bound".into(),
                    coordinate: k + 1,
                    value: s[k],
                    bound: upper[k],
                    excess,
                });
            }
            let y = s[0];
            segment.max_y = segment.max_y.max(y);
            let excess = y - spec.y_max;
            classify(&mut report, excess, spec.y_max.abs().max(1.0), || {
                Violation {
                    time: t,
                    step: j,
                    kind: "constraint".into(),
                    coordinate: 1,
                    value: y,
                    bound: spec.y_max,
                    excess,
                }
            });

            let decay = (-beta * (t - t0)).exp();
            let env_y = (s0[0] - spec.y_max) * decay + spec.y_max;
            segment.min_envelope_slack_y = segment.min_envelope_slack_y.min(env_y - y);
            for k in 1..r {
                let slack = s0[k] * decay - s[k];
                segment.min_envelope_slack_derivs[k - 1] =
                    segment.min_envelope_slack_derivs[k - 1].min(slack);
            }
            if j + 1 < states.len() && exit_reason(spec, &states[j + 1]).is_none() {
                let dt = traj.times[j + 1] - t;
                let next = states[j + 1][r - 1];
                let excess = (next - s[r - 1]) / dt + beta * 0.5 * (next + s[r - 1]);
                segment.max_dissipation_excess = segment.max_dissipation_excess.max(excess);
            }
            j += 1;
        }
        segment.t1 = traj
            .times
            .get(segment.end_step)
            .copied()
            .unwrap_or_else(|| *traj.times.last().unwrap());
        i = segment.end_step.max(start + 1);
        report.segments.push(segment);
    }
    report
}

fn exit_reason(spec: &BufferSpec, s: &[f64]) -> Option<ExitReason> {
    if let Some(k) = (0..spec.r).find(|&k| s[k] < spec.lower_bounds[k]) {
        return Some(ExitReason::LowerBound { index: k + 1 });
    }
    if !spec.aux.contains(&s[spec.r..], 0.0) {
        return Some(ExitReason::Aux);
    }
    None
}

fn classify(
    report: &mut TrajectoryReport,
    excess: f64,
    scale: f64,
    make: impl FnOnce() -> Violation,
) {
    if excess < STRICT_SLACK {
        return;
    }
    if excess <= OVERSHOOT_TOL * scale {
        report.overshoots.push(make());
    } else {
        report.violations.push(make());
    }
}

/// Violations as CSV, header `time,step,kind,coordinate,value,bound,excess`.
pub fn violations_csv(rows: &[(usize, Violation)]) -> String {
    let mut out = String::from("rollout,time,step,kind,coordinate,value,bound,excess\n");
    for (rollout, v) in rows {
        out.push_str(&format!(
            "{rollout},{},{},{},{},{},{},{}\n",
            v.time, v.step, v.kind, v.coordinate, v.value, v.bound, v.excess
        ));
    }
    out
}

/// Upper envelopes implied by the dissipation inequality from time `t0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelopes {
    /// `(y(t0) - y_max) e^(-beta dt) + y_max` per grid point.
    pub y: Vec<f64>,
    /// `derivs[k-1][i] = y^(k)(t0) e^(-beta dt_i)` for `k = 1..r-1`.
    pub derivs: Vec<Vec<f64>>,
}

/// Envelopes at the time offsets `dt_grid` from the initial output
/// derivatives `[y, y', ..., y^(r-1)]`.
pub fn envelope_bounds(
    y_derivs_at_t0: &[f64],
    y_max: f64,
    beta: f64,
    dt_grid: &[f64],
) -> Envelopes {
    let y0 = y_derivs_at_t0.first().copied().unwrap_or(0.0);
    let decay: Vec<f64> = dt_grid.iter().map(|dt| (-beta * dt).exp()).collect();
    Envelopes {
        y: decay.iter().map(|d| (y0 - y_max) * d + y_max).collect(),
        derivs: y_derivs_at_t0
            .iter()
            .skip(1)
            .map(|v| decay.iter().map(|d| v * d).collect())
            .collect(),
    }
}

/// Largest `y(t) - y0 e^(-beta t)` along an RK4 solution of
/// `y' = -beta y + slack(t)` on `[0, horizon]`.
pub fn comparison_ode_max_excess(
    beta: f64,
    slack: &dyn Fn(f64) -> f64,
    y0: f64,
    horizon: f64,
) -> f64 {
    let dt = 1e-3f64.min(0.1 / beta.abs().max(1e-12));
    let steps = (horizon / dt).ceil().max(1.0) as usize;
    let h = horizon / steps as f64;
    let f = |t: f64, y: f64| -beta * y + slack(t);
    let mut y = y0;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..steps {
        let t = k as f64 * h;
        let k1 = f(t, y);
        let k2 = f(t + h / 2.0, y + h / 2.0 * k1);
        let k3 = f(t + h / 2.0, y + h / 2.0 * k2);
        let k4 = f(t + h, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        worst = worst.max(y - y0 * (-beta * (t + h)).exp());
    }
    worst
}

/// Whether the solution of `y' = -beta y + slack(t)` stays below
/// `y0 e^(-beta t)` up to integration tolerance.
pub fn comparison_ode_check(beta: f64, slack: &dyn Fn(f64) -> f64, y0: f64, horizon: f64) -> bool {
    comparison_ode_max_excess(beta, slack, y0, horizon) <= 1e-7 * y0.abs().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffer::AuxPolytope;

    fn di_spec() -> BufferSpec {
        BufferSpec::new(
            2,
            2,
            0.0,
            1.0,
            2.0,
            vec![0.0, 0.0],
            AuxPolytope::Box {
                low: vec![],
                high: vec![],
            },
        )
        .unwrap()
    }

    fn traj(points: &[(f64, [f64; 2])]) -> Trajectory {
        Trajectory {
            times: points.iter().map(|p| p.0).collect(),
            states_x: points.iter().map(|p| p.1.to_vec()).collect(),
            states_s: points.iter().map(|p| p.1.to_vec()).collect(),
            controls: points.iter().map(|_| vec![0.0]).collect(),
            outputs: points.iter().map(|p| p.1[0]).collect(),
        }
    }

    #[test]
    fn envelope_hand_values() {
        let e = envelope_bounds(&[0.1, 1.0], 0.2, 10.0, &[0.1, 0.2, 1e6]);
        assert!((e.y[0] - (0.2 - 0.1 * (-1.0f64).exp())).abs() < 1e-12);
        assert!((e.y[0] - 0.163_212).abs() < 1e-6);
        assert!((e.derivs[0][1] - (-2.0f64).exp()).abs() < 1e-12);
        assert!((e.y[2] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn comparison_ode_cases() {
        assert!(comparison_ode_max_excess(3.0, &|_| 0.0, 1.0, 2.0).abs() <= 1e-7);
        assert!(comparison_ode_max_excess(3.0, &|_| -1.0, 1.0, 2.0) < -1e-4);
        assert!(comparison_ode_check(
            3.0,
            &|t| if t < 1.0 { -0.5 } else { -2.0 },
            1.0,
            2.0
        ));
        assert!(!comparison_ode_check(3.0, &|_| 1.0, 1.0, 2.0));
    }

    #[test]
    fn never_entering_trajectory_makes_no_claims() {
        let report = check_trajectory(&traj(&[(0.0, [-1.0, 0.5]), (0.1, [-0.9, 0.5])]), &di_spec());
        assert!(!report.entered);
        assert!(report.segments.is_empty() && report.violations.is_empty());
    }

    #[test]
    fn injected_jump_is_flagged() {
        let t = traj(&[
            (0.0, [0.2, 0.5]),
            (0.1, [0.3, 0.5]),
            (0.2, [0.5, 1.5]),
            (0.3, [0.6, 0.1]),
        ]);
        let report = check_trajectory(&t, &di_spec());
        assert!(report.entered);
        assert_eq!(report.violations.len(), 1);
        let v = &report.violations[0];
        assert_eq!(
            (v.step, v.coordinate, v.kind.as_str()),
            (2, 2, "upper_bound")
        );
        assert!((v.excess - 0.5).abs() < 1e-12);
    }

    #[test]
    fn exit_through_floor_ends_segment() {
        let t = traj(&[
            (0.0, [0.2, 0.5]),
            (0.1, [0.25, 0.1]),
            (0.2, [0.26, -0.1]),
            (0.3, [0.3, 5.0]),
        ]);
        let report = check_trajectory(&t, &di_spec());
        assert_eq!(report.segments.len(), 1);
        assert_eq!(report.segments[0].exit, ExitReason::LowerBound { index: 2 });
        assert_eq!(report.segments[0].end_step, 2);
        assert!(report.violations.is_empty());
    }

    #[test]
    fn small_overshoot_is_not_a_violation() {
        let t = traj(&[(0.0, [0.5, 0.5]), (0.1, [1.0 + 1e-8, 0.0])]);
        let report = check_trajectory(&t, &di_spec());
        assert!(report.violations.is_empty());
        assert!(!report.overshoots.is_empty());
    }
}
