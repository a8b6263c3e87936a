//! Finite-difference `y^(r)` and the approximation measure against analytic
//! values.

use policed_rl::approx::{estimate_eps, EpsOptions};
use policed_rl::buffer::{AuxPolytope, BufferSpec};
use policed_rl::env::{
    f_tilde_r_with_control, CartPole, CartPoleParams, Environment, Shuttle, ShuttleParams,
    StateBox, F_TILDE_STEP,
};
use policed_rl::police::Policy;
use policed_rl::Result;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `y'' = s1^2 + u` on `s = (y, y')`.
struct Quadratic;

impl Environment for Quadratic {
    fn id(&self) -> &str {
        "quadratic"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn relative_degree(&self) -> usize {
        2
    }
    fn dynamics(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![x[1], x[0] * x[0] + u[0]])
    }
    fn control_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-10.0], vec![10.0])
    }
    fn output_row(&self) -> Vec<f64> {
        vec![1.0, 0.0]
    }
    fn y_max(&self) -> f64 {
        1.0
    }
    fn to_s(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }
    fn from_s(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(s.to_vec())
    }
    fn sample_initial(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![0.0, 0.0]
    }
    fn dt(&self) -> f64 {
        0.01
    }
    fn horizon(&self) -> f64 {
        1.0
    }
    fn is_terminal(&self, _x: &[f64]) -> bool {
        false
    }
}

struct Constant(f64);

impl Policy for Constant {
    fn state_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn act(&self, _s: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![self.0])
    }
}

#[test]
fn quadratic_drift_measure_covers_the_minimax_error() {
    // y in [0, 1]: the best uniform affine fit of s1^2 is off by exactly 1/8,
    // so a least-squares fit on a dense sample cannot do better.
    let spec = BufferSpec::tight(
        2,
        0.0,
        1.0,
        1.0,
        AuxPolytope::Box {
            low: vec![],
            high: vec![],
        },
    )
    .unwrap();
    let opts = EpsOptions {
        samples: 4000,
        holdout_factor: 5,
        ..EpsOptions::default()
    };
    let m = estimate_eps(&Quadratic, &Constant(0.5), &spec, &opts).unwrap();
    assert!(
        m.eps_fit >= 0.125 - 1e-3,
        "fit residual {} below the minimax bound",
        m.eps_fit
    );
    assert!(m.eps_fit <= 0.25, "fit residual {}", m.eps_fit);
    assert!((m.eps - (1.2 * m.eps_fit + 1e-3)).abs() < 1e-12);
    assert!(m.holdout_max_residual.unwrap() <= m.eps);
    // the s2 coefficient of the fit is irrelevant to s1^2
    assert!(m.w_s[1].abs() < 0.1, "{:?}", m.w_s);
}

#[test]
fn cartpole_derivative_matches_the_vector_field() {
    let env = CartPole::new(CartPoleParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let s: Vec<f64> = vec![
            rng.random_range(-0.3..0.3),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let u = [rng.random_range(-3.0..3.0)];
        let x = env.from_s(&s).unwrap();
        // s2 = theta_dot, so y'' is the theta_dot component of the vector field
        let exact = env.dynamics(&x, &u).unwrap()[3];
        let fd = f_tilde_r_with_control(&env, &s, &u, F_TILDE_STEP).unwrap();
        assert!(
            (fd - exact).abs() <= 1e-6 * exact.abs().max(1.0),
            "{fd} vs {exact}"
        );
    }
}

#[test]
fn shuttle_derivative_matches_the_chain_rule() {
    let env = Shuttle::new(ShuttleParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let x = [
            rng.random_range(1.0..500.0),
            rng.random_range(-0.7..-0.01),
            rng.random_range(100.0..400.0),
        ];
        let u = [rng.random_range(0.0..1.0)];
        // s2 = -v sin(gamma): d/dt = -(v' sin(gamma) + v cos(gamma) gamma')
        let f = env.dynamics(&x, &u).unwrap();
        let exact = -(f[2] * x[1].sin() + x[2] * x[1].cos() * f[1]);
        let s = env.to_s(&x).unwrap();
        let fd = f_tilde_r_with_control(&env, &s, &u, F_TILDE_STEP).unwrap();
        assert!(
            (fd - exact).abs() <= 1e-6 * exact.abs().max(1.0),
            "{fd} vs {exact}"
        );
    }
}

#[test]
fn central_difference_error_is_second_order() {
    let env = CartPole::new(CartPoleParams::default()).unwrap();
    let s = [0.15, 0.8, 0.2, -0.4];
    let u = [1.5];
    let exact = env.dynamics(&env.from_s(&s).unwrap(), &u).unwrap()[3];
    let err = |h: f64| (f_tilde_r_with_control(&env, &s, &u, h).unwrap() - exact).abs();
    let (coarse, fine) = (err(0.04), err(0.02));
    let ratio = coarse / fine;
    assert!(
        (3.5..=4.5).contains(&ratio),
        "halving the step cut the error by {ratio}"
    );
    // Richardson extrapolation removes the leading term
    let rich = (4.0 * f_tilde_r_with_control(&env, &s, &u, 0.02).unwrap()
        - f_tilde_r_with_control(&env, &s, &u, 0.04).unwrap())
        / 3.0;
    assert!((rich - exact).abs() < fine / 10.0);
}

#[test]
fn shuttle_vertical_speed_is_v_sin_gamma() {
    let env = Shuttle::new(ShuttleParams {
        initial: StateBox {
            low: vec![500.0, -0.5, 300.0],
            high: vec![500.0, -0.2, 400.0],
        },
        ..ShuttleParams::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let x = env.sample_initial(&mut rng);
        let hdot = env.dynamics(&x, &[0.3]).unwrap()[0];
        assert!((hdot - x[2] * x[1].sin()).abs() <= 1e-9);
    }
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

    #[test]
    fn eps_grows_with_inflation_and_margin(a in 1.0f64..3.0, b in 0.0f64..1.0, margin in 0.0f64..0.1, seed in 0u64..1000) {
        let spec = BufferSpec::tight(2, 0.0, 1.0, 1.0, AuxPolytope::Box { low: vec![], high: vec![] }).unwrap();
        let opts = |inflation: f64, abs_margin: f64| EpsOptions {
            samples: 200,
            seed,
            inflation,
            abs_margin,
            holdout_factor: 0,
        };
        let eps = |o: EpsOptions| estimate_eps(&Quadratic, &Constant(0.0), &spec, &o).unwrap();
        let base = eps(opts(a, margin));
        let wider = eps(opts(a + b, margin));
        let padded = eps(opts(a, margin + b));
        proptest::prop_assert_eq!(base.eps_fit, wider.eps_fit);
        proptest::prop_assert!(wider.eps >= base.eps && padded.eps >= base.eps);
        proptest::prop_assert!(base.eps >= base.eps_fit);
    }
}
