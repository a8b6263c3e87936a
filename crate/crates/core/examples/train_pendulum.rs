//! Trains a POLICEd and a baseline pendulum policy, certifies the POLICEd one
//! and compares both on rollouts pushed towards the buffer.
//!
//! `cargo run --release --example train_pendulum [iterations]`

use policed_rl::approx::estimate_eps;
use policed_rl::config::ExperimentConfig;
use policed_rl::env::{rollout, StateBox};
use policed_rl::train::{evaluate, train, PolicyKind};
use policed_rl::verify::{check_trajectory, verify_dissipation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let mut cfg = ExperimentConfig::preset("pendulum").expect("shipped preset");
    if let Some(iters) = std::env::args().nth(1) {
        cfg.train.iterations = iters.parse()?;
    }
    let (env, spec) = cfg.build()?;
    let eval_box = cfg
        .verify
        .initial
        .clone()
        .expect("preset has an evaluation box");

    for kind in [PolicyKind::Policed, PolicyKind::Baseline] {
        let mut tc = cfg.train.clone();
        tc.kind = kind;
        let start = std::time::Instant::now();
        let out = train(env.as_ref(), &spec, &tc, &mut |_| Ok(()))?;
        println!("{kind:?}: trained in {:.1?}", start.elapsed());
        if let Some(last) = out.log.iter().rev().find(|r| r.return_mean.is_some()) {
            println!(
                "  last training return {:.2}",
                last.return_mean.unwrap_or_default()
            );
        }
        println!(
            "  evaluation return {:.2}",
            evaluate(env.as_ref(), &out.policy, 10, 1)?
        );

        let eps = estimate_eps(env.as_ref(), &out.policy, &spec, &cfg.verify.eps)?;
        let cert = verify_dissipation(env.as_ref(), &out.policy, &spec, &eps)?;
        println!(
            "  eps {:.4} (fit {:.4}), certificate {}, min margin {:.4}",
            eps.eps,
            eps.eps_fit,
            cert.verdict,
            cert.min_margin().unwrap_or(f64::NAN)
        );

        let (entered, violating, crossed) = pushed_rollouts(
            env.as_ref(),
            &out.policy,
            &spec,
            &eval_box,
            cfg.verify.rollouts,
        )?;
        println!("  rollouts entering the buffer: {entered}, with violations: {violating}");
        println!("  rollouts crossing theta = 0.2 from anywhere in the box: {crossed}");
    }
    Ok(())
}

fn pushed_rollouts(
    env: &dyn policed_rl::env::Environment,
    policy: &dyn policed_rl::police::Policy,
    spec: &policed_rl::buffer::BufferSpec,
    initial: &StateBox,
    count: usize,
) -> anyhow::Result<(usize, usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut entered, mut violating, mut crossed) = (0, 0, 0);
    for _ in 0..count * 20 {
        if entered == count {
            break;
        }
        let traj = rollout(env, policy, &initial.sample(&mut rng))?;
        if traj.outputs.iter().any(|y| *y > spec.y_max) {
            crossed += 1;
        }
        let report = check_trajectory(&traj, spec);
        if report.entered {
            entered += 1;
            if !report.violations.is_empty() {
                violating += 1;
            }
        }
    }
    Ok((entered, violating, crossed))
}
