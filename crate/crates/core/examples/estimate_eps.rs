//! Estimates how far the closed-loop `y^(r)` is from affine over the buffer
//! for the double integrator (exactly affine) and the cart-pole.
//!
//! `cargo run --example estimate_eps`

use policed_rl::approx::{estimate_eps, EpsOptions};
use policed_rl::config::ExperimentConfig;
use policed_rl::nn::{Activation, Mlp, OutputActivation};
use policed_rl::police::{InputScaling, PolicedPolicy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let opts = EpsOptions::default();
    for name in ["double_integrator", "pendulum"] {
        let (env, spec) = ExperimentConfig::preset(name)
            .expect("shipped preset")
            .build()?;
        let vertices = spec.enumerate_vertices()?;
        let points: Vec<Vec<f64>> = vertices.iter().map(|v| v.s.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let widths = [env.state_dim(), 16, 16, env.action_dim()];
        let (low, high) = env.control_bounds();
        let net = Mlp::random(
            &widths,
            Activation::Relu,
            OutputActivation::Clamp { low, high },
            &mut rng,
        )?;
        let mut policy = PolicedPolicy::new(net, InputScaling::from_points(&points), vertices)?;
        policy.enforce()?;

        let m = estimate_eps(env.as_ref(), &policy, &spec, &opts)?;
        println!(
            "{name}: eps_fit = {:.3e}, eps = {:.3e}, holdout residual = {:.3e}, rank {}",
            m.eps_fit,
            m.eps,
            m.holdout_max_residual.unwrap_or(f64::NAN),
            m.rank
        );
        println!(
            "  model: y^(r) ~ {:?} . s + {:?} . u + {:.4}",
            m.w_s, m.w_u, m.w0
        );
    }
    Ok(())
}
