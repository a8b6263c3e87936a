//! Proximal policy optimization of baseline and POLICEd policies.
//!
//! The actor is a [`PolicedPolicy`] whose raw output is the mean of a diagonal
//! Gaussian with a learned, state-independent log std. Policed runs add the
//! vertex dissipation penalty to the loss and re-enforce the affine region
//! after every optimizer step. Baseline runs share every other setting.

mod penalty;
mod ppo;
mod reward;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::approx::{estimate_eps, sample_buffer, ApproxMeasure, EpsOptions};
use crate::buffer::BufferSpec;
use crate::env::{rk4_step, Environment};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, GradTape, Mlp, OutputActivation};
use crate::police::{affine_residual, InputScaling, PolicedPolicy, Policy};

pub use penalty::{
    control_bound_penalty_grad, dissipation_penalty, dissipation_penalty_grad, PenaltyGrad,
    CONTROL_FD_STEP,
};
pub use ppo::{gae, gaussian_log_prob, gaussian_log_prob_grad};
pub use reward::{
    reward, reward_pendulum, reward_shuttle, RewardKind, Transition, PENDULUM_THETA_LIMIT,
};

/// Seed offset of the stream used for input scaling, so that changing it
/// never perturbs the rollout noise.
const SCALING_SEED_SALT: u64 = 0x5ca1_ab1e;
/// Seed of the fixed hull sample on which affine exactness is tracked.
const RESIDUAL_SEED: u64 = 0x00af_f10e;
/// Initial states mixed into the input-scaling box.
const SCALING_INITIAL_STATES: usize = 64;
/// Factor applied to the initial output-layer weights.
const OUTPUT_INIT_SCALE: f64 = 0.01;
const CHECKPOINT_FORMAT: &str = "policed-checkpoint";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Baseline,
    Policed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub kind: PolicyKind,
    /// PPO iterations, each collecting `steps_per_iteration` transitions.
    pub iterations: usize,
    pub steps_per_iteration: usize,
    /// Episode length cap; defaults to the environment horizon.
    pub max_episode_steps: Option<usize>,
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub max_grad_norm: f64,
    pub entropy_coef: f64,
    /// Initial exploration std as a fraction of the control half-width.
    pub init_std_fraction: f64,
    /// Weight of the vertex dissipation penalty (policed runs only).
    pub penalty_weight: f64,
    /// Extra margin inside the dissipation hinge.
    pub penalty_margin: f64,
    /// Weight of the hinge keeping raw vertex outputs inside the control box.
    pub control_penalty_weight: f64,
    /// `eps` used by the penalty until the first re-estimate.
    pub eps: f64,
    /// Re-estimate `eps` every this many iterations; 0 keeps it fixed.
    pub eps_every: usize,
    pub eps_options: EpsOptions,
    /// Penalty-only rounds after PPO; each re-estimates `eps` first.
    pub refine_rounds: usize,
    pub refine_steps: usize,
    pub refine_lr: f64,
    /// Hull samples on which affine exactness is tracked; 0 disables it.
    pub residual_samples: usize,
    /// Checkpoint every this many iterations; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            kind: PolicyKind::Policed,
            iterations: 200,
            steps_per_iteration: 2048,
            max_episode_steps: None,
            hidden: vec![64, 64],
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            epochs: 10,
            minibatch_size: 256,
            max_grad_norm: 0.5,
            entropy_coef: 0.0,
            init_std_fraction: 0.3,
            penalty_weight: 1.0,
            penalty_margin: 0.05,
            control_penalty_weight: 1.0,
            eps: 0.1,
            eps_every: 50,
            eps_options: EpsOptions {
                samples: 2000,
                holdout_factor: 0,
                ..EpsOptions::default()
            },
            refine_rounds: 10,
            refine_steps: 200,
            refine_lr: 1e-3,
            residual_samples: 10_000,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.gae_lambda >= 0.0 && self.gae_lambda <= 1.0) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad("clip_ratio must lie in (0, 1)");
        }
        if !(self.penalty_weight >= 0.0) || !(self.control_penalty_weight >= 0.0) {
            return bad("penalty weights must be non-negative");
        }
        if !(self.penalty_margin >= 0.0) || !(self.eps >= 0.0) {
            return bad("penalty_margin and eps must be non-negative");
        }
        let rates = [
            self.actor_lr,
            self.critic_lr,
            self.refine_lr,
            self.max_grad_norm,
            self.init_std_fraction,
        ];
        if rates.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("learning rates, max_grad_norm and init_std_fraction must be positive");
        }
        if self.steps_per_iteration == 0 || self.epochs == 0 || self.minibatch_size == 0 {
            return bad("steps_per_iteration, epochs and minibatch_size must be positive");
        }
        if self.max_episode_steps == Some(0) {
            return bad("max_episode_steps must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }

    fn policed(&self) -> bool {
        self.kind == PolicyKind::Policed
    }
}

/// One row of the training log. Refinement rows have no return.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iter: usize,
    pub return_mean: Option<f64>,
    pub penalty: f64,
    pub min_vertex_margin: f64,
    pub eps: f64,
    /// Affine residual on the fixed hull sample (policed runs).
    pub affine_residual: Option<f64>,
}

pub fn training_log_csv(rows: &[TrainLogRow]) -> String {
    let mut out = String::from("iter,return_mean,penalty,min_vertex_margin,eps\n");
    for r in rows {
        let ret = r.return_mean.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.iter, ret, r.penalty, r.min_vertex_margin, r.eps
        );
    }
    out
}

/// Everything needed to resume evaluation of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub env: String,
    pub kind: PolicyKind,
    pub iteration: usize,
    pub eps: f64,
    pub policy: PolicedPolicy,
    pub critic: Mlp,
    pub log_std: Vec<f64>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)
            .map_err(|e| Error::IncompatibleCheckpoint(format!("not a checkpoint: {e}")))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != 1 {
            return Err(Error::IncompatibleCheckpoint(format!(
                "unsupported checkpoint format {} v{}",
                ck.format, ck.version
            )));
        }
        // Round-trip the policy through its own validating loader.
        PolicedPolicy::from_json(&ck.policy.to_json()?)?;
        Ok(ck)
    }

    /// Errors unless the checkpoint was trained on `env`.
    pub fn check_env(&self, env: &dyn Environment) -> Result<()> {
        if self.env != env.id()
            || self.policy.state_dim() != env.state_dim()
            || self.policy.action_dim() != env.action_dim()
        {
            return Err(Error::IncompatibleCheckpoint(format!(
                "checkpoint for {} ({} -> {}) does not fit environment {} ({} -> {})",
                self.env,
                self.policy.state_dim(),
                self.policy.action_dim(),
                env.id(),
                env.state_dim(),
                env.action_dim()
            )));
        }
        Ok(())
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub policy: PolicedPolicy,
    pub critic: Mlp,
    pub log_std: Vec<f64>,
    pub log: Vec<TrainLogRow>,
    /// Last `eps` estimate of a policed run.
    pub eps: Option<ApproxMeasure>,
    /// Largest affine residual seen after any iteration of a policed run.
    pub max_affine_residual: Option<f64>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, env: &dyn Environment, kind: PolicyKind) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            env: env.id().into(),
            kind,
            iteration: self.log.len(),
            eps: self.eps.as_ref().map_or(0.0, |m| m.eps),
            policy: self.policy.clone(),
            critic: self.critic.clone(),
            log_std: self.log_std.clone(),
        }
    }
}

/// Transitions collected in one iteration.
#[derive(Clone, Debug, Default)]
pub struct RolloutBatch {
    pub s: Vec<Vec<f64>>,
    /// Sampled (unclipped) actions.
    pub u: Vec<Vec<f64>>,
    pub reward: Vec<f64>,
    pub value: Vec<f64>,
    pub log_prob: Vec<f64>,
    pub advantage: Vec<f64>,
    pub ret: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

/// Environment state carried across iterations.
struct Cursor {
    x: Vec<f64>,
    u_prev: Option<Vec<f64>>,
    steps: usize,
    ret: f64,
}

impl Cursor {
    fn reset(env: &dyn Environment, rng: &mut dyn RngCore) -> Self {
        Self {
            x: env.sample_initial(rng),
            u_prev: None,
            steps: 0,
            ret: 0.0,
        }
    }
}

/// The freshly initialised actor for `env`: input scaling from the buffer
/// vertices and sampled initial states, small output weights and the output
/// bias at the middle of the control box.
pub fn init_policy(
    env: &dyn Environment,
    spec: &BufferSpec,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PolicedPolicy> {
    let vertices = spec.enumerate_vertices()?;
    let mut scaling_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SCALING_SEED_SALT);
    let mut points: Vec<Vec<f64>> = vertices.iter().map(|v| v.s.clone()).collect();
    for _ in 0..SCALING_INITIAL_STATES {
        points.push(env.to_s(&env.sample_initial(&mut scaling_rng))?);
    }
    let scaling = InputScaling::from_points(&points);
    let (low, high) = env.control_bounds();
    let mut widths = vec![env.state_dim()];
    widths.extend(&cfg.hidden);
    widths.push(env.action_dim());
    let mut net = Mlp::random(
        &widths,
        Activation::Relu,
        OutputActivation::Clamp {
            low: low.clone(),
            high: high.clone(),
        },
        rng,
    )?;
    let out = net.layers_mut().last_mut().expect("network has layers");
    out.weights.iter_mut().for_each(|w| *w *= OUTPUT_INIT_SCALE);
    for (b, (l, h)) in out.bias.iter_mut().zip(low.iter().zip(&high)) {
        *b = 0.5 * (l + h);
    }
    PolicedPolicy::new(net, scaling, vertices)
}

/// Trains a policy on `env` with buffer `spec`. `sink` receives periodic
/// checkpoints and, on divergence, the last finite state before the error is
/// returned.
pub fn train(
    env: &dyn Environment,
    spec: &BufferSpec,
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if spec.n != env.state_dim() || spec.r != env.relative_degree() {
        return Err(Error::Config(format!(
            "buffer (n = {}, r = {}) does not match environment {} (n = {}, r = {})",
            spec.n,
            spec.r,
            env.id(),
            env.state_dim(),
            env.relative_degree()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = init_policy(env, spec, cfg, &mut rng)?;
    let mut critic = {
        let mut widths = vec![env.state_dim()];
        widths.extend(&cfg.hidden);
        widths.push(1);
        Mlp::random(
            &widths,
            Activation::Relu,
            OutputActivation::Identity,
            &mut rng,
        )?
    };
    let (low, high) = env.control_bounds();
    let mut log_std: Vec<f64> = low
        .iter()
        .zip(&high)
        .map(|(l, h)| (cfg.init_std_fraction * 0.5 * (h - l)).max(1e-6).ln())
        .collect();
    if cfg.policed() {
        policy.enforce()?;
    }

    let reward_kind = RewardKind::for_env(env.id());
    let max_steps = cfg
        .max_episode_steps
        .unwrap_or_else(|| ((env.horizon() / env.dt()).round() as usize).max(1));
    let residual_set = if cfg.policed() && cfg.residual_samples > 0 {
        sample_buffer(spec, cfg.residual_samples, RESIDUAL_SEED)?
    } else {
        Vec::new()
    };
    let n_actor = policy.net.param_count() + log_std.len();
    let mut actor_opt = Adam::new(cfg.actor_lr, n_actor);
    let mut critic_opt = Adam::new(cfg.critic_lr, critic.param_count());
    let mut eps = cfg.eps;
    let mut eps_measure = None;
    let mut log = Vec::new();
    let mut max_residual: Option<f64> = None;
    let mut cursor = Cursor::reset(env, &mut rng);

    let snapshot =
        |policy: &PolicedPolicy, critic: &Mlp, log_std: &[f64], iteration: usize, eps: f64| {
            Checkpoint {
                format: CHECKPOINT_FORMAT.into(),
                version: 1,
                env: env.id().into(),
                kind: cfg.kind,
                iteration,
                eps,
                policy: policy.clone(),
                critic: critic.clone(),
                log_std: log_std.to_vec(),
            }
        };

    for iter in 0..cfg.iterations {
        let (mut batch, returns) = collect(
            env,
            &policy,
            &critic,
            &log_std,
            cfg,
            reward_kind,
            max_steps,
            &mut cursor,
            &mut rng,
        )?;
        normalize(&mut batch.advantage);

        let before = snapshot(&policy, &critic, &log_std, iter, eps);
        let update = update_epochs(
            env,
            spec,
            cfg,
            &batch,
            &mut policy,
            &mut critic,
            &mut log_std,
            &mut actor_opt,
            &mut critic_opt,
            eps,
            &mut rng,
        );
        if let Err(e) = update {
            sink(&before)?;
            return Err(Error::Training(format!("iteration {iter}: {e}")));
        }

        if cfg.policed() && cfg.eps_every > 0 && (iter + 1) % cfg.eps_every == 0 {
            let m = estimate_eps(env, &policy, spec, &eps_options(cfg, iter))?;
            eps = m.eps;
            eps_measure = Some(m);
        }
        let diss = dissipation_penalty_grad(&policy, spec, env, eps, 0.0)?;
        let residual = if residual_set.is_empty() {
            None
        } else {
            let r = affine_residual(&policy, &residual_set)?;
            if !(r <= crate::police::AFFINE_TOL) {
                log::warn!("affine residual {r:e} after iteration {iter}");
            }
            max_residual = Some(max_residual.map_or(r, |m: f64| m.max(r)));
            Some(r)
        };
        let return_mean =
            (!returns.is_empty()).then(|| returns.iter().sum::<f64>() / returns.len() as f64);
        log::debug!(
            "iter {iter}: return {return_mean:?} penalty {:.4e} margin {:.4e} eps {eps:.4e}",
            diss.value,
            diss.min_margin
        );
        log.push(TrainLogRow {
            iter,
            return_mean,
            penalty: diss.value,
            min_vertex_margin: diss.min_margin,
            eps,
            affine_residual: residual,
        });
        if cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 {
            sink(&snapshot(&policy, &critic, &log_std, iter + 1, eps))?;
        }
    }

    if cfg.policed() && cfg.penalty_weight > 0.0 {
        let mut opt = Adam::new(cfg.refine_lr, policy.net.param_count());
        for round in 0..cfg.refine_rounds {
            eps = estimate_eps(
                env,
                &policy,
                spec,
                &eps_options(cfg, cfg.iterations + round),
            )?
            .eps;
            let mut diss = dissipation_penalty_grad(&policy, spec, env, eps, cfg.penalty_margin)?;
            let (mut ctrl, _) = control_bound_penalty_grad(&policy, 0.0)?;
            if diss.value == 0.0 && ctrl == 0.0 {
                break;
            }
            for _ in 0..cfg.refine_steps {
                let mut grad = diss.grad.clone();
                let (c, mut cgrad) = control_bound_penalty_grad(&policy, 0.0)?;
                cgrad.scale(cfg.control_penalty_weight);
                grad.add_assign(&cgrad)?;
                let mut params = policy.net.params();
                opt.step(&mut params, &grad.flat())?;
                policy.net.set_params(&params)?;
                policy.enforce()?;
                diss = dissipation_penalty_grad(&policy, spec, env, eps, cfg.penalty_margin)?;
                ctrl = c;
                if diss.value == 0.0 && ctrl == 0.0 {
                    break;
                }
            }
            let exact = dissipation_penalty_grad(&policy, spec, env, eps, 0.0)?;
            let residual = if residual_set.is_empty() {
                None
            } else {
                let r = affine_residual(&policy, &residual_set)?;
                max_residual = Some(max_residual.map_or(r, |m: f64| m.max(r)));
                Some(r)
            };
            log.push(TrainLogRow {
                iter: cfg.iterations + round,
                return_mean: None,
                penalty: exact.value,
                min_vertex_margin: exact.min_margin,
                eps,
                affine_residual: residual,
            });
        }
        let m = estimate_eps(
            env,
            &policy,
            spec,
            &eps_options(cfg, cfg.iterations + cfg.refine_rounds),
        )?;
        eps_measure = Some(m);
    }

    Ok(TrainOutcome {
        policy,
        critic,
        log_std,
        log,
        eps: eps_measure,
        max_affine_residual: max_residual,
    })
}

fn eps_options(cfg: &TrainConfig, salt: usize) -> EpsOptions {
    EpsOptions {
        seed: cfg.eps_options.seed.wrapping_add(salt as u64),
        ..cfg.eps_options.clone()
    }
}

#[allow(clippy::too_many_arguments)]
fn collect(
    env: &dyn Environment,
    policy: &PolicedPolicy,
    critic: &Mlp,
    log_std: &[f64],
    cfg: &TrainConfig,
    kind: RewardKind,
    max_steps: usize,
    cursor: &mut Cursor,
    rng: &mut ChaCha8Rng,
) -> Result<(RolloutBatch, Vec<f64>)> {
    let mut batch = RolloutBatch::default();
    let mut next_values = Vec::with_capacity(cfg.steps_per_iteration);
    let mut dones = Vec::with_capacity(cfg.steps_per_iteration);
    let mut returns = Vec::new();
    let value_of = |s: &[f64]| -> Result<f64> { Ok(critic.forward(&policy.scaling.apply(s))?[0]) };

    for step in 0..cfg.steps_per_iteration {
        let s = env.to_s(&cursor.x)?;
        let mean = policy.act_raw(&s)?;
        let a: Vec<f64> = mean
            .iter()
            .zip(log_std)
            .map(|(m, ls)| {
                let z: f64 = StandardNormal.sample(rng);
                m + ls.exp() * z
            })
            .collect();
        let u = env.clip_control(&a);
        let x_next = rk4_step(env, &cursor.x, &u, env.dt())?;
        cursor.steps += 1;
        let terminal = env.is_terminal(&x_next);
        let truncated = !terminal && cursor.steps >= max_steps;
        let u_prev = cursor.u_prev.clone().unwrap_or_else(|| u.clone());
        let r = reward(
            kind,
            &Transition {
                x: &cursor.x,
                u: &u,
                u_prev: &u_prev,
                x_next: &x_next,
                is_final: terminal || truncated,
            },
        );
        cursor.ret += r;

        batch.value.push(value_of(&s)?);
        batch.log_prob.push(gaussian_log_prob(&a, &mean, log_std));
        batch.s.push(s);
        batch.u.push(a);
        batch.reward.push(r);

        let last = step + 1 == cfg.steps_per_iteration;
        if terminal {
            next_values.push(0.0);
        } else if truncated || last {
            next_values.push(value_of(&env.to_s(&x_next)?)?);
        } else {
            next_values.push(f64::NAN);
        }
        dones.push(terminal || truncated || last);

        if terminal || truncated {
            returns.push(cursor.ret);
            *cursor = Cursor::reset(env, rng);
        } else {
            cursor.x = x_next;
            cursor.u_prev = Some(u);
        }
    }

    // GAE per contiguous episode chunk.
    let mut start = 0;
    for end in 0..batch.len() {
        if !dones[end] {
            continue;
        }
        let mut values = batch.value[start..=end].to_vec();
        values.push(next_values[end]);
        let adv = gae(
            &batch.reward[start..=end],
            &values,
            cfg.gamma,
            cfg.gae_lambda,
        );
        batch.advantage.extend(&adv);
        start = end + 1;
    }
    batch.ret = batch
        .advantage
        .iter()
        .zip(&batch.value)
        .map(|(a, v)| a + v)
        .collect();
    if batch.advantage.iter().any(|a| !a.is_finite()) {
        return Err(Error::Training("non-finite advantage".into()));
    }
    Ok((batch, returns))
}

fn normalize(v: &mut [f64]) {
    if v.len() < 2 {
        return;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
    let std = var.sqrt().max(1e-8);
    v.iter_mut().for_each(|x| *x = (*x - mean) / std);
}

fn clip_norm(grads: &mut [f64], max_norm: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= k);
    }
}

#[allow(clippy::too_many_arguments)]
fn update_epochs(
    env: &dyn Environment,
    spec: &BufferSpec,
    cfg: &TrainConfig,
    batch: &RolloutBatch,
    policy: &mut PolicedPolicy,
    critic: &mut Mlp,
    log_std: &mut [f64],
    actor_opt: &mut Adam,
    critic_opt: &mut Adam,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let m = log_std.len();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let inv = 1.0 / chunk.len() as f64;
            let mut actor_tape = GradTape::zeros_like(&policy.net);
            let mut critic_tape = GradTape::zeros_like(critic);
            let mut d_log_std = vec![-cfg.entropy_coef; m];
            let mut loss = 0.0;
            for &i in chunk {
                let z = policy.scaling.apply(&batch.s[i]);
                let trace = policy.net.forward_trace(&z)?;
                let mean = trace.pre_activations.last().expect("network has layers");
                let lp = gaussian_log_prob(&batch.u[i], mean, log_std);
                let ratio = (lp - batch.log_prob[i]).exp();
                let adv = batch.advantage[i];
                let clipped = ratio.clamp(1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
                loss -= inv * (ratio * adv).min(clipped * adv);
                let active = !((adv > 0.0 && ratio > 1.0 + cfg.clip_ratio)
                    || (adv < 0.0 && ratio < 1.0 - cfg.clip_ratio));
                if active {
                    let (d_mean, d_ls) = gaussian_log_prob_grad(&batch.u[i], mean, log_std);
                    let k = -inv * adv * ratio;
                    let upstream: Vec<f64> = d_mean.iter().map(|d| k * d).collect();
                    policy
                        .net
                        .backward_raw_from_trace(&trace, &upstream, &mut actor_tape)?;
                    for (g, d) in d_log_std.iter_mut().zip(&d_ls) {
                        *g += k * d;
                    }
                }

                let ctrace = critic.forward_trace(&z)?;
                let err = ctrace.output[0] - batch.ret[i];
                loss += 0.5 * inv * err * err;
                critic.backward_raw_from_trace(&ctrace, &[inv * err], &mut critic_tape)?;
            }
            if cfg.policed() && cfg.penalty_weight > 0.0 {
                let mut p = dissipation_penalty_grad(policy, spec, env, eps, cfg.penalty_margin)?;
                loss += cfg.penalty_weight * p.value;
                p.grad.scale(cfg.penalty_weight);
                actor_tape.add_assign(&p.grad)?;
                let (c, mut cgrad) = control_bound_penalty_grad(policy, 0.0)?;
                loss += cfg.control_penalty_weight * c;
                cgrad.scale(cfg.control_penalty_weight);
                actor_tape.add_assign(&cgrad)?;
            }
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss {loss}")));
            }

            let mut grads = actor_tape.flat();
            grads.extend(&d_log_std);
            clip_norm(&mut grads, cfg.max_grad_norm);
            let mut params = policy.net.params();
            params.extend(log_std.iter());
            actor_opt.step(&mut params, &grads)?;
            let split = params.len() - m;
            policy.net.set_params(&params[..split])?;
            log_std.copy_from_slice(&params[split..]);
            if cfg.policed() {
                policy.enforce()?;
            }

            let mut cgrads = critic_tape.flat();
            clip_norm(&mut cgrads, cfg.max_grad_norm);
            let mut cparams = critic.params();
            critic_opt.step(&mut cparams, &cgrads)?;
            critic.set_params(&cparams)?;
        }
    }
    Ok(())
}

/// Mean undiscounted return of deterministic (noise-free) episodes from
/// `episodes` seeded initial states.
pub fn evaluate(
    env: &dyn Environment,
    policy: &dyn Policy,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    if episodes == 0 {
        return Ok(0.0);
    }
    let kind = RewardKind::for_env(env.id());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_steps = ((env.horizon() / env.dt()).round() as usize).max(1);
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut x = env.sample_initial(&mut rng);
        let mut u_prev: Option<Vec<f64>> = None;
        for step in 0..max_steps {
            let u = env.clip_control(&policy.act(&env.to_s(&x)?)?);
            let x_next = rk4_step(env, &x, &u, env.dt())?;
            let terminal = env.is_terminal(&x_next);
            let prev = u_prev.take().unwrap_or_else(|| u.clone());
            total += reward(
                kind,
                &Transition {
                    x: &x,
                    u: &u,
                    u_prev: &prev,
                    x_next: &x_next,
                    is_final: terminal || step + 1 == max_steps,
                },
            );
            if terminal {
                break;
            }
            x = x_next;
            u_prev = Some(u);
        }
    }
    Ok(total / episodes as f64)
}
