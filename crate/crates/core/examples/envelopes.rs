//! Exponential envelopes of the output and its derivatives after buffer
//! entry, and the comparison-lemma check behind them.
//!
//! `cargo run --example envelopes`

use policed_rl::verify::{comparison_ode_check, comparison_ode_max_excess, envelope_bounds};

fn main() {
    // Pendulum entering the buffer at theta = 0.1 rad with theta_dot = 0.8 rad/s.
    let grid: Vec<f64> = (0..=5).map(|k| 0.1 * k as f64).collect();
    let env = envelope_bounds(&[0.1, 0.8], 0.2, 10.0, &grid);
    println!("t     y bound   y' bound");
    for (i, t) in grid.iter().enumerate() {
        println!("{t:.1}  {:>8.5}  {:>8.5}", env.y[i], env.derivs[0][i]);
    }

    println!();
    let beta = 2.0;
    for (label, slack) in [
        (
            "no slack",
            Box::new(|_t: f64| 0.0) as Box<dyn Fn(f64) -> f64>,
        ),
        ("slack -0.5", Box::new(|_t: f64| -0.5)),
        (
            "slack -sin^2(3t)",
            Box::new(|t: f64| -(3.0 * t).sin().powi(2)),
        ),
        ("slack +0.5", Box::new(|_t: f64| 0.5)),
    ] {
        let excess = comparison_ode_max_excess(beta, &slack, 1.0, 3.0);
        let ok = comparison_ode_check(beta, &slack, 1.0, 3.0);
        println!(
            "{label:<18} max excess over y0 e^(-beta t): {excess:>10.3e}  below envelope: {ok}"
        );
    }
}
