//! Trains a POLICEd shuttle glide policy and checks that every rollout
//! entering the buffer leaves it through the soft-landing floor
//! `|h_dot| <= 6 ft/s` before touchdown.
//!
//! `cargo run --release --example shuttle_landing [iterations]`

use policed_rl::config::ExperimentConfig;
use policed_rl::env::rollout;
use policed_rl::train::{evaluate, train};
use policed_rl::verify::{check_trajectory, ExitReason};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let mut cfg = ExperimentConfig::preset("shuttle").expect("shipped preset");
    if let Some(iters) = std::env::args().nth(1) {
        cfg.train.iterations = iters.parse()?;
    }
    let (env, spec) = cfg.build()?;

    let start = std::time::Instant::now();
    let out = train(env.as_ref(), &spec, &cfg.train, &mut |_| Ok(()))?;
    println!(
        "trained in {:.1?}, max affine residual {:.2e}",
        start.elapsed(),
        out.max_affine_residual.unwrap_or(f64::NAN)
    );
    println!(
        "evaluation return {:.2}",
        evaluate(env.as_ref(), &out.policy, 10, 1)?
    );

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.verify.seed);
    let (mut entered, mut handed_off, mut violating) = (0, 0, 0);
    let mut worst_hdot = 0.0f64;
    for _ in 0..cfg.verify.rollouts {
        let traj = rollout(env.as_ref(), &out.policy, &env.sample_initial(&mut rng))?;
        let report = check_trajectory(&traj, &spec);
        if !report.entered {
            continue;
        }
        entered += 1;
        if !report.is_safe() {
            violating += 1;
        }
        let seg = &report.segments[0];
        if let (ExitReason::LowerBound { index: 2 }, Some(s)) = (&seg.exit, &seg.exit_state) {
            // s = (-h, -h_dot, gamma)
            let (h, hdot) = (-s[0], -s[1]);
            if h > 0.0 && hdot.abs() <= 6.0 {
                handed_off += 1;
                worst_hdot = worst_hdot.max(hdot.abs());
            }
        }
    }
    println!(
        "{} rollouts: {entered} entered the buffer, {handed_off} handed off softly \
         (largest |h_dot| {worst_hdot:.2} ft/s), {violating} with violations",
        cfg.verify.rollouts
    );
    Ok(())
}
