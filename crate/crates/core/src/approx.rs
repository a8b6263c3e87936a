//! Estimating how far the closed-loop `y^(r)` is from affine over the buffer.
//!
//! Samples of `f_r(s) = y^(r)(s, policy(s))` are regressed on `(s, u, 1)` by
//! least squares; the largest residual, inflated, is the bound `eps` used by
//! the vertex certificate.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::buffer::BufferSpec;
use crate::env::{f_tilde_r_with_control, Environment, F_TILDE_STEP};
use crate::error::{Error, Result};
use crate::hull::lstsq;
use crate::police::Policy;

/// Relative singular-value cutoff of the regression.
pub const RANK_CUTOFF: f64 = 1e-10;

/// Dirichlet concentration of the convex-combination sampler. Values below one
/// push samples towards faces and edges of the buffer.
const DIRICHLET_ALPHA: f64 = 0.4;

/// Seed offset of the holdout sample so it never coincides with the fit sample.
const HOLDOUT_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsOptions {
    /// Number of random samples in addition to the vertices.
    pub samples: usize,
    pub seed: u64,
    pub inflation: f64,
    pub abs_margin: f64,
    /// Holdout sample size as a multiple of `samples`; 0 disables it.
    pub holdout_factor: usize,
}

impl Default for EpsOptions {
    fn default() -> Self {
        Self {
            samples: 2000,
            seed: 0,
            inflation: 1.2,
            abs_margin: 1e-3,
            holdout_factor: 10,
        }
    }
}

/// Affine model `w_s . s + w_u . u + w0` of `y^(r)` together with its error bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxMeasure {
    pub eps_fit: f64,
    pub eps: f64,
    pub inflation: f64,
    pub abs_margin: f64,
    pub sample_count: usize,
    pub seed: u64,
    pub holdout_max_residual: Option<f64>,
    pub w_s: Vec<f64>,
    pub w_u: Vec<f64>,
    pub w0: f64,
    /// Numerical rank of the regression matrix.
    pub rank: usize,
}

impl ApproxMeasure {
    /// A user-supplied bound with no fitted model behind it.
    pub fn manual(eps: f64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!(
                "eps must be finite and non-negative, got {eps}"
            )));
        }
        Ok(Self {
            eps_fit: eps,
            eps,
            inflation: 1.0,
            abs_margin: 0.0,
            sample_count: 0,
            seed: 0,
            holdout_max_residual: None,
            w_s: Vec::new(),
            w_u: Vec::new(),
            w0: 0.0,
            rank: 0,
        })
    }

    pub fn predict(&self, s: &[f64], u: &[f64]) -> f64 {
        let lin_s: f64 = self.w_s.iter().zip(s).map(|(a, b)| a * b).sum();
        let lin_u: f64 = self.w_u.iter().zip(u).map(|(a, b)| a * b).sum();
        lin_s + lin_u + self.w0
    }

    /// Largest `|f_r(s) - model(s)|` over `samples` under `policy`.
    pub fn max_residual(
        &self,
        env: &dyn Environment,
        policy: &dyn Policy,
        samples: &[Vec<f64>],
    ) -> Result<f64> {
        let mut worst = 0.0f64;
        for s in samples {
            let (u, f) = closed_loop_point(env, policy, s)?;
            worst = worst.max((f - self.predict(s, &u)).abs());
        }
        Ok(worst)
    }
}

/// All buffer vertices followed by `count` random convex combinations of them.
pub fn sample_buffer(spec: &BufferSpec, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let vertices: Vec<Vec<f64>> = spec
        .enumerate_vertices()?
        .into_iter()
        .map(|v| v.s)
        .collect();
    let mut out = vertices.clone();
    out.extend(convex_combinations(&vertices, count, seed));
    Ok(out)
}

/// `count` points `sum_k w_k p_k` with Dirichlet-distributed weights.
pub fn convex_combinations(points: &[Vec<f64>], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(DIRICHLET_ALPHA, 1.0).expect("valid gamma parameters");
    let n = points.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut w: Vec<f64> = points.iter().map(|_| gamma.sample(&mut rng)).collect();
        let mut total: f64 = w.iter().sum();
        if !(total > 0.0) {
            w.iter_mut().for_each(|v| *v = 1.0);
            total = w.len() as f64;
        }
        let mut p = vec![0.0; n];
        for (pt, wk) in points.iter().zip(&w) {
            let wk = wk / total;
            for (acc, v) in p.iter_mut().zip(pt) {
                *acc += wk * v;
            }
        }
        out.push(p);
    }
    out
}

fn closed_loop_point(
    env: &dyn Environment,
    policy: &dyn Policy,
    s: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let u = env.clip_control(&policy.act(s)?);
    let f = f_tilde_r_with_control(env, s, &u, F_TILDE_STEP)?;
    Ok((u, f))
}

/// Least-squares fit of `f_r` over `samples` and the resulting bound.
pub fn fit_affine(
    samples: &[Vec<f64>],
    policy: &dyn Policy,
    env: &dyn Environment,
    inflation: f64,
    abs_margin: f64,
) -> Result<ApproxMeasure> {
    let n = env.state_dim();
    let m = env.action_dim();
    if samples.len() < n + m + 2 {
        return Err(Error::Shape(format!(
            "need at least {} samples to fit an affine model, got {}",
            n + m + 2,
            samples.len()
        )));
    }
    if !(inflation >= 1.0) || !(abs_margin >= 0.0) {
        return Err(Error::Config(
            "inflation must be >= 1 and margin >= 0".into(),
        ));
    }
    let cols = n + m + 1;
    let mut a = DMatrix::zeros(samples.len(), cols);
    let mut b = DVector::zeros(samples.len());
    for (row, s) in samples.iter().enumerate() {
        let (u, f) = closed_loop_point(env, policy, s)?;
        for (j, v) in s.iter().chain(&u).enumerate() {
            a[(row, j)] = *v;
        }
        a[(row, cols - 1)] = 1.0;
        b[row] = f;
    }
    // Column scaling keeps the cutoff meaningful when coordinates differ in units.
    let scales: Vec<f64> = (0..cols)
        .map(|j| a.column(j).amax().max(f64::MIN_POSITIVE))
        .collect();
    let mut scaled = a.clone();
    for (j, sc) in scales.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / sc);
    }
    let (w_scaled, rank) = lstsq(&scaled, &b, RANK_CUTOFF);
    if rank < cols {
        log::warn!(
            "affine fit is rank deficient ({rank} of {cols}); using the minimum-norm solution"
        );
    }
    let w: Vec<f64> = w_scaled.iter().zip(&scales).map(|(v, sc)| v / sc).collect();
    let residuals = &a * DVector::from_column_slice(&w) - &b;
    let eps_fit = residuals.amax();
    Ok(ApproxMeasure {
        eps_fit,
        eps: eps_fit * inflation + abs_margin,
        inflation,
        abs_margin,
        sample_count: samples.len(),
        seed: 0,
        holdout_max_residual: None,
        w_s: w[..n].to_vec(),
        w_u: w[n..n + m].to_vec(),
        w0: w[cols - 1],
        rank,
    })
}

/// Samples the buffer, fits the affine model and checks it on a larger
/// independent holdout sample.
pub fn estimate_eps(
    env: &dyn Environment,
    policy: &dyn Policy,
    spec: &BufferSpec,
    opts: &EpsOptions,
) -> Result<ApproxMeasure> {
    let samples = sample_buffer(spec, opts.samples, opts.seed)?;
    let mut measure = fit_affine(&samples, policy, env, opts.inflation, opts.abs_margin)?;
    measure.seed = opts.seed;
    if opts.holdout_factor > 0 {
        let vertices: Vec<Vec<f64>> = spec
            .enumerate_vertices()?
            .into_iter()
            .map(|v| v.s)
            .collect();
        let holdout = convex_combinations(
            &vertices,
            opts.samples.max(1) * opts.holdout_factor,
            opts.seed ^ HOLDOUT_SEED_SALT,
        );
        let worst = measure.max_residual(env, policy, &holdout)?;
        if worst > measure.eps {
            log::warn!("holdout residual {worst:e} exceeds eps {:e}", measure.eps);
        }
        measure.holdout_max_residual = Some(worst);
    }
    Ok(measure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffer::AuxPolytope;
    use crate::env::{DoubleIntegrator, DoubleIntegratorParams};

    struct Linear(Vec<f64>, f64);

    impl Policy for Linear {
        fn state_dim(&self) -> usize {
            self.0.len()
        }
        fn action_dim(&self) -> usize {
            1
        }
        fn act(&self, s: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![
                self.0.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() + self.1,
            ])
        }
    }

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

    #[test]
    fn zero_extra_samples_returns_vertices() {
        let spec = di_spec();
        let samples = sample_buffer(&spec, 0, 1).unwrap();
        let vertices: Vec<Vec<f64>> = spec
            .enumerate_vertices()
            .unwrap()
            .into_iter()
            .map(|v| v.s)
            .collect();
        assert_eq!(samples, vertices);
    }

    #[test]
    fn samples_are_inside_and_deterministic() {
        let spec = di_spec();
        let a = sample_buffer(&spec, 500, 9).unwrap();
        assert!(a.iter().all(|s| spec.contains_tol(s, 1e-12)));
        assert_eq!(a, sample_buffer(&spec, 500, 9).unwrap());
        assert_ne!(a, sample_buffer(&spec, 500, 10).unwrap());
    }

    #[test]
    fn affine_system_has_zero_residual() {
        let env = DoubleIntegrator::new(DoubleIntegratorParams::default()).unwrap();
        let policy = Linear(vec![0.3, -2.0], -1.0);
        let opts = EpsOptions {
            samples: 200,
            seed: 3,
            ..EpsOptions::default()
        };
        let m = estimate_eps(&env, &policy, &di_spec(), &opts).unwrap();
        assert!(m.eps_fit <= 1e-8, "{}", m.eps_fit);
        assert!((m.eps - (m.eps_fit * 1.2 + 1e-3)).abs() < 1e-15);
        assert!(m.holdout_max_residual.unwrap() <= 1e-8);
        // u is affine in s, so the regressors are collinear
        assert!(m.rank < 4);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let env = DoubleIntegrator::new(DoubleIntegratorParams::default()).unwrap();
        let policy = Linear(vec![0.0, 0.0], 0.0);
        assert!(fit_affine(&vec![vec![0.0, 0.0]; 4], &policy, &env, 1.2, 1e-3).is_err());
    }

    #[test]
    fn manual_measure() {
        let m = ApproxMeasure::manual(0.0).unwrap();
        assert_eq!((m.eps, m.sample_count), (0.0, 0));
        assert!(ApproxMeasure::manual(-1.0).is_err());
    }
}
