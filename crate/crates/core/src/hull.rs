//! Small dense helpers: minimum-norm least squares and convex-hull membership.

use nalgebra::{DMatrix, DVector};

/// Minimum-norm least-squares solution of `a x ~ b` via SVD, with singular
/// values below `rcond * sigma_max` treated as zero. Returns the solution and
/// the numerical rank.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> (DVector<f64>, usize) {
    if a.ncols() == 0 {
        return (DVector::zeros(0), 0);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = rcond * smax;
    let rank = svd.singular_values.iter().filter(|s| **s > cutoff).count();
    let x = svd
        .solve(b, cutoff.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DVector::zeros(a.ncols()));
    (x, rank)
}

/// Non-negative least squares (Lawson-Hanson): `min |a x - b|` with `x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.iter().fold(1.0f64, |m, v| m.max(v.abs())) * (n.max(1) as f64);

    for _ in 0..3 * n + 10 {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]))
            .filter(|&j| w[j] > tol);
        let Some(j) = candidate else { break };
        passive[j] = true;

        loop {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let sub = a.select_columns(&idx);
            let (zp, _) = lstsq(&sub, b, 1e-13);
            let mut z = DVector::zeros(n);
            for (k, &i) in idx.iter().enumerate() {
                z[i] = zp[k];
            }
            if idx.iter().all(|&i| z[i] > 0.0) {
                x = z;
                break;
            }
            let alpha = idx
                .iter()
                .filter(|&&i| z[i] <= 0.0)
                .map(|&i| x[i] / (x[i] - z[i]))
                .fold(f64::INFINITY, f64::min);
            x += (z - &x) * alpha;
            for &i in &idx {
                if x[i] <= tol {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|p| *p) {
                break;
            }
        }
    }
    x
}

/// Whether `p` is a convex combination of `vertices`, up to `tol` in the
/// infinity norm of the reconstruction error (relative to the data scale).
pub fn in_convex_hull(vertices: &[Vec<f64>], p: &[f64], tol: f64) -> bool {
    let Some(d) = vertices.first().map(Vec::len) else {
        return false;
    };
    if p.len() != d {
        return false;
    }
    if d == 0 {
        return true;
    }
    let scale = vertices
        .iter()
        .flatten()
        .chain(p)
        .fold(1.0f64, |m, v| m.max(v.abs()));
    let a = DMatrix::from_fn(d + 1, vertices.len(), |i, j| {
        if i < d {
            vertices[j][i] / scale
        } else {
            1.0
        }
    });
    let b = DVector::from_fn(d + 1, |i, _| if i < d { p[i] / scale } else { 1.0 });
    let x = nnls(&a, &b);
    let residual = (&a * x - b).amax();
    residual <= tol.max(1e-10)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstsq_exact_and_min_norm() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let (x, rank) = lstsq(&a, &b, 1e-12);
        assert_eq!(rank, 2);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);

        // duplicated column: minimum-norm splits the weight evenly
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let b = DVector::from_vec(vec![2.0, 4.0]);
        let (x, rank) = lstsq(&a, &b, 1e-12);
        assert_eq!(rank, 1);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nnls_clips_negative_direction() {
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let x = nnls(&a, &b);
        assert!((x[0] - 1.0).abs() < 1e-12 && x[1] == 0.0);
    }

    #[test]
    fn hull_membership() {
        let square = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ];
        assert!(in_convex_hull(&square, &[0.5, 0.5], 1e-9));
        assert!(in_convex_hull(&square, &[1.0, 0.0], 1e-9));
        assert!(!in_convex_hull(&square, &[1.1, 0.5], 1e-9));
        let tri = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(!in_convex_hull(&tri, &[0.6, 0.6], 1e-9));
        assert!(in_convex_hull(&tri, &[0.3, 0.6], 1e-9));
    }
}
