//! Makes a random ReLU network exactly affine on the pendulum buffer and
//! measures the residual of the best affine fit before and after.
//!
//! `cargo run --example police_enforcement`

use policed_rl::approx::sample_buffer;
use policed_rl::config::ExperimentConfig;
use policed_rl::nn::{Activation, Mlp, OutputActivation};
use policed_rl::police::{affine_residual, extract_affine_map, InputScaling, PolicedPolicy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let (_, spec) = ExperimentConfig::preset("pendulum")
        .expect("shipped preset")
        .build()?;
    let vertices = spec.enumerate_vertices()?;
    let samples = sample_buffer(&spec, 10_000, 1)?;
    let points: Vec<Vec<f64>> = vertices.iter().map(|v| v.s.clone()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Mlp::random(
        &[4, 32, 32, 1],
        Activation::Relu,
        OutputActivation::Identity,
        &mut rng,
    )?;
    let mut policy = PolicedPolicy::new(net, InputScaling::from_points(&points), vertices)?;
    println!(
        "residual before enforcement: {:.3e}",
        affine_residual(&policy, &samples)?
    );

    let stats = policy.enforce()?;
    println!(
        "shifted {} units by {:.3} in total",
        stats.units_shifted, stats.total_shift
    );
    println!(
        "residual after enforcement:  {:.3e}",
        affine_residual(&policy, &samples)?
    );

    let map = extract_affine_map(&policy)?;
    println!(
        "u = D s + e on the buffer with D = {:?}, e = {:?}",
        map.d[0], map.e
    );
    Ok(())
}
