//! Compares backpropagated parameter gradients with central finite
//! differences on random networks.
//!
//! `cargo run --example gradient_check`

use policed_rl::nn::{Activation, Mlp, OutputActivation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let net = Mlp::random(
            &[3, 8, 8, 2],
            Activation::Relu,
            OutputActivation::Identity,
            &mut rng,
        )?;
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let upstream: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grad = net.backward(&x, &upstream)?.flat();
        let params = net.params();
        let objective = |p: &[f64]| -> anyhow::Result<f64> {
            let mut probe = net.clone();
            probe.set_params(p)?;
            Ok(probe
                .forward(&x)?
                .iter()
                .zip(&upstream)
                .map(|(a, b)| a * b)
                .sum())
        };
        let mut trial_worst = 0.0f64;
        for i in 0..params.len() {
            let mut up = params.clone();
            up[i] += h;
            let mut down = params.clone();
            down[i] -= h;
            let fd = (objective(&up)? - objective(&down)?) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            trial_worst = trial_worst.max(rel);
        }
        println!(
            "net {trial:>2}: {} parameters, max relative error {trial_worst:.2e}",
            params.len()
        );
        worst = worst.max(trial_worst);
    }
    println!("worst relative error: {worst:.2e}");
    Ok(())
}
