//! Buffer geometry against an independent half-space vertex enumeration.

mod common;

use policed_rl::buffer::{fibonacci_vertex_count, tight_lower_bounds, AuxPolytope, BufferSpec};
use policed_rl::Error;
use proptest::prelude::*;

fn spec_from(
    r: usize,
    aux_dim: usize,
    y_min: f64,
    width: f64,
    ydot_max: f64,
    nudges: &[f64],
) -> BufferSpec {
    let y_max = y_min + width;
    let mut lower = tight_lower_bounds(r, y_min, y_max, ydot_max);
    for (v, nudge) in lower.iter_mut().skip(1).zip(nudges) {
        *v += nudge * v.abs().max(1.0);
    }
    let aux = AuxPolytope::Box {
        low: (0..aux_dim).map(|i| -1.0 - i as f64).collect(),
        high: (0..aux_dim).map(|i| 0.5 + i as f64).collect(),
    };
    BufferSpec::new(r, r + aux_dim, y_min, y_max, ydot_max, lower, aux).unwrap()
}

fn heads(points: &[Vec<f64>], r: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for p in points {
        let h = p[..r].to_vec();
        if !out.iter().any(|q| common::same_point(q, &h, 1e-9)) {
            out.push(h);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn tight_vertices_match_brute_force(
        r in 2usize..=5,
        aux_dim in 0usize..=2,
        y_min in -2.0f64..2.0,
        width in 0.1f64..3.0,
        ydot_max in 0.1f64..5.0,
    ) {
        let spec = spec_from(r, aux_dim, y_min, width, ydot_max, &[]);
        let verts: Vec<Vec<f64>> = spec.enumerate_vertices().unwrap().into_iter().map(|v| v.s).collect();
        prop_assert_eq!(verts.len() as u64, fibonacci_vertex_count(r) << aux_dim);
        let oracle = common::brute_force_vertices(&spec);
        let tol = 1e-9 * (1.0 + ydot_max * ydot_max / width).powi(r as i32);
        prop_assert!(common::same_point_set(&verts, &oracle, tol), "{:?} vs {:?}", verts, oracle);
    }

    #[test]
    fn perturbed_lower_bounds_match_brute_force(
        r in 2usize..=5,
        y_min in -2.0f64..2.0,
        width in 0.1f64..3.0,
        ydot_max in 0.1f64..5.0,
        nudges in prop::collection::vec(-0.8f64..0.8, 4),
    ) {
        let spec = spec_from(r, 0, y_min, width, ydot_max, &nudges);
        let oracle = common::brute_force_vertices(&spec);
        match spec.enumerate_vertices() {
            Ok(v) => {
                let verts: Vec<Vec<f64>> = v.into_iter().map(|v| v.s).collect();
                let tol = 1e-8 * (1.0 + ydot_max * ydot_max / width).powi(r as i32);
                prop_assert!(common::same_point_set(&heads(&verts, r), &oracle, tol), "{:?} vs {:?}", verts, oracle);
            }
            Err(Error::DegenerateBuffer(_)) => prop_assert!(oracle.len() <= 1, "{:?}", oracle),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn vertices_lie_in_the_buffer(
        r in 2usize..=6,
        aux_dim in 0usize..=2,
        y_min in -2.0f64..2.0,
        width in 0.1f64..3.0,
        ydot_max in 0.1f64..5.0,
        nudges in prop::collection::vec(-0.8f64..0.8, 5),
    ) {
        let spec = spec_from(r, aux_dim, y_min, width, ydot_max, &nudges);
        if let Ok(verts) = spec.enumerate_vertices() {
            let scale = (1.0 + ydot_max * ydot_max / width).powi(r as i32);
            for v in verts {
                prop_assert!(spec.contains_tol(&v.s, 1e-9 * scale), "{:?}", v.s);
            }
        }
    }

    #[test]
    fn validator_agrees_with_the_bound_tree(
        r in 2usize..=8,
        y_min in -2.0f64..2.0,
        width in 0.1f64..3.0,
        ydot_max in 0.1f64..5.0,
        nudges in prop::collection::vec(-0.8f64..0.8, 7),
    ) {
        let spec = spec_from(r, 0, y_min, width, ydot_max, &nudges);
        let direct = spec.bound_tree().unwrap().iter().all(|leaf| {
            let upper = spec.upper_bound(leaf);
            spec.lower_bounds.iter().zip(&upper).all(|(lo, up)| *lo <= up + 1e-12 * up.abs().max(1.0))
        });
        prop_assert_eq!(spec.validate_lower_bounds().ok(), direct);
    }
}

#[test]
fn feasible_bounds_make_the_bound_tree_exact() {
    // beta = 2: s3_min <= -beta ydot_max = -4 and s4_min <= beta^2 s2_min = 0
    let spec = BufferSpec::new(
        4,
        4,
        0.0,
        1.0,
        2.0,
        vec![0.0, 0.0, -5.0, -1.0],
        common::unit_box(0),
    )
    .unwrap();
    assert!(spec.validate_lower_bounds().ok());
    let tree = spec.bound_tree().unwrap();
    let verts: Vec<Vec<f64>> = spec
        .enumerate_vertices()
        .unwrap()
        .into_iter()
        .map(|v| v.s)
        .collect();
    assert!(common::same_point_set(&tree, &verts, 1e-12));
    assert!(common::same_point_set(
        &verts,
        &common::brute_force_vertices(&spec),
        1e-9
    ));
}
