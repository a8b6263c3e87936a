//! Certifies the hand-written policy `u = -2 eps - beta s2 - 1` on the double
//! integrator and monitors seeded rollouts that enter the buffer.
//!
//! `cargo run --release --example certify_double_integrator`

use policed_rl::approx::ApproxMeasure;
use policed_rl::config::ExperimentConfig;
use policed_rl::env::rollout;
use policed_rl::nn::OutputActivation;
use policed_rl::police::{AffineMap, PolicedPolicy};
use policed_rl::verify::{check_trajectory, verify_dissipation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let (env, spec) = ExperimentConfig::preset("double_integrator")
        .expect("shipped preset")
        .build()?;
    let beta = spec.beta()?;
    let eps = 0.1;
    let map = AffineMap {
        d: vec![vec![0.0, -beta]],
        e: vec![-2.0 * eps - 1.0],
    };
    let (low, high) = env.control_bounds();
    let policy = PolicedPolicy::from_affine(
        &map,
        spec.enumerate_vertices()?,
        OutputActivation::Clamp { low, high },
    )?;

    let cert = verify_dissipation(env.as_ref(), &policy, &spec, &ApproxMeasure::manual(eps)?)?;
    println!("certificate: {}", cert.verdict);
    for v in &cert.vertices {
        println!(
            "  vertex {:?}: u = {:.3}, margin = {:.6}",
            v.s,
            v.u[0],
            v.margin.unwrap_or(f64::NAN)
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut entered, mut unsafe_runs, mut attempts) = (0, 0, 0);
    while entered < 1000 && attempts < 20_000 {
        attempts += 1;
        let traj = rollout(env.as_ref(), &policy, &env.sample_initial(&mut rng))?;
        let report = check_trajectory(&traj, &spec);
        if report.entered {
            entered += 1;
            if !report.is_safe() {
                unsafe_runs += 1;
            }
        }
    }
    println!("{entered} rollouts entered the buffer in {attempts} attempts, {unsafe_runs} with violations");
    Ok(())
}
