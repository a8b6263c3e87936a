//! Helpers shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use policed_rl::buffer::{AuxPolytope, BufferSpec};

/// Half-space form `A s <= b` of a buffer whose auxiliary polytope is a box.
pub fn halfspaces(spec: &BufferSpec) -> (Vec<Vec<f64>>, Vec<f64>) {
    let beta = spec.beta().unwrap();
    let n = spec.n;
    let unit = |i: usize, v: f64| {
        let mut row = vec![0.0; n];
        row[i] = v;
        row
    };
    let mut a = Vec::new();
    let mut b = Vec::new();
    for k in 0..spec.r {
        a.push(unit(k, -1.0));
        b.push(-spec.lower_bounds[k]);
        match k {
            0 => {
                a.push(unit(0, 1.0));
                b.push(spec.y_max);
            }
            1 => {
                let mut row = unit(1, 1.0);
                row[0] = beta;
                a.push(row);
                b.push(beta * spec.y_max);
            }
            _ => {
                let mut row = unit(k, 1.0);
                row[k - 1] = beta;
                a.push(row);
                b.push(0.0);
            }
        }
    }
    let AuxPolytope::Box { low, high } = &spec.aux else {
        panic!("the oracle only handles box auxiliary polytopes");
    };
    for (j, (lo, hi)) in low.iter().zip(high).enumerate() {
        a.push(unit(spec.r + j, -1.0));
        b.push(-lo);
        a.push(unit(spec.r + j, 1.0));
        b.push(*hi);
    }
    (a, b)
}

/// Vertices by brute force: every choice of `n` active constraints with a
/// unique, feasible intersection point.
pub fn brute_force_vertices(spec: &BufferSpec) -> Vec<Vec<f64>> {
    let (a, b) = halfspaces(spec);
    let n = spec.n;
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    let mut out: Vec<Vec<f64>> = Vec::new();
    for subset in combinations(a.len(), n) {
        let m = DMatrix::from_fn(n, n, |r, c| a[subset[r]][c]);
        let rhs = DVector::from_fn(n, |r, _| b[subset[r]]);
        let Some(x) = m.lu().solve(&rhs) else {
            continue;
        };
        if x.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let feasible = a
            .iter()
            .zip(&b)
            .all(|(row, bi)| row.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>() <= bi + tol);
        if feasible && !out.iter().any(|p| same_point(p, x.as_slice(), tol)) {
            out.push(x.as_slice().to_vec());
        }
    }
    out
}

pub fn same_point(p: &[f64], q: &[f64], tol: f64) -> bool {
    p.iter().zip(q).all(|(a, b)| (a - b).abs() <= tol)
}

/// Whether the two point sets agree up to `tol`, ignoring order.
pub fn same_point_set(a: &[Vec<f64>], b: &[Vec<f64>], tol: f64) -> bool {
    a.len() == b.len()
        && a.iter().all(|p| b.iter().any(|q| same_point(p, q, tol)))
        && b.iter().all(|q| a.iter().any(|p| same_point(p, q, tol)))
}

fn combinations(total: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > total {
        return out;
    }
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == total - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// The unit box `[-1, 1]^dim` as an auxiliary polytope (`2^dim` vertices).
pub fn unit_box(dim: usize) -> AuxPolytope {
    AuxPolytope::Box {
        low: vec![-1.0; dim],
        high: vec![1.0; dim],
    }
}
