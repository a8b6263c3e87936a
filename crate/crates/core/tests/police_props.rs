//! Enforcement makes any ReLU network exactly affine on the buffer, and a
//! passing certificate implies safe rollouts.

use policed_rl::approx::{convex_combinations, ApproxMeasure};
use policed_rl::buffer::{AuxPolytope, BufferSpec};
use policed_rl::env::{rollout, DoubleIntegrator, DoubleIntegratorParams, Environment};
use policed_rl::nn::{Activation, Mlp, OutputActivation};
use policed_rl::police::{
    affine_residual, enforce_affine_region, extract_affine_map, AffineMap, PolicedPolicy,
    AFFINE_TOL,
};
use policed_rl::verify::{check_trajectory, verify_dissipation};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn region(r: usize, aux_dim: usize) -> BufferSpec {
    let aux = AuxPolytope::Box {
        low: vec![-1.0; aux_dim],
        high: vec![2.0; aux_dim],
    };
    BufferSpec::tight(r, -0.5, 0.5, 1.5, aux).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn enforced_networks_are_affine_on_the_buffer(
        seed in any::<u64>(),
        r in 2usize..=4,
        aux_dim in 0usize..=2,
        width in 2usize..=24,
        depth in 1usize..=3,
        outputs in 1usize..=2,
    ) {
        let spec = region(r, aux_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![spec.n];
        widths.extend(std::iter::repeat_n(width, depth));
        widths.push(outputs);
        let net = Mlp::random(&widths, Activation::Relu, OutputActivation::Identity, &mut rng).unwrap();
        let vertices = spec.enumerate_vertices().unwrap();
        let points: Vec<Vec<f64>> = vertices.iter().map(|v| v.s.clone()).collect();
        let policy = enforce_affine_region(net, vertices).unwrap();
        let samples = convex_combinations(&points, 500, seed);
        prop_assert!(affine_residual(&policy, &samples).unwrap() <= AFFINE_TOL);
        prop_assert!(extract_affine_map(&policy).is_ok());

        // a second pass has nothing left to shift
        let mut again = policy.clone();
        let stats = again.enforce().unwrap();
        prop_assert_eq!(stats.units_shifted, 0);
        prop_assert_eq!(again.net.params(), policy.net.params());
    }

    #[test]
    fn certified_affine_policies_are_safe(
        k1 in -3.0f64..0.0,
        k2 in -6.0f64..0.0,
        offset in -4.0f64..1.0,
        eps in 0.0f64..0.5,
        seed in any::<u64>(),
    ) {
        let env = DoubleIntegrator::new(DoubleIntegratorParams::default()).unwrap();
        let spec = BufferSpec::tight(2, 0.0, 1.0, 2.0, AuxPolytope::Box { low: vec![], high: vec![] }).unwrap();
        let (low, high) = env.control_bounds();
        let map = AffineMap { d: vec![vec![k1, k2]], e: vec![offset] };
        let policy = PolicedPolicy::from_affine(&map, spec.enumerate_vertices().unwrap(), OutputActivation::Clamp { low, high }).unwrap();
        let cert = verify_dissipation(&env, &policy, &spec, &ApproxMeasure::manual(eps).unwrap()).unwrap();
        prop_assume!(cert.passed());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let traj = rollout(&env, &policy, &env.sample_initial(&mut rng)).unwrap();
            let report = check_trajectory(&traj, &spec);
            prop_assert!(report.is_safe(), "{:?}", report.violations);
            for seg in &report.segments {
                prop_assert!(seg.max_dissipation_excess <= 1e-6);
            }
        }
    }
}
