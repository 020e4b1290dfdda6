//! Thin dense-matrix helpers over nalgebra. All solvers work on plain
//! `Vec` rows so the rest of the crate never touches matrix types directly.

use nalgebra::{DMatrix, DVector};

pub fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c])
}

/// 2-norm condition number. Infinite when the smallest singular value
/// underflows to zero.
pub fn condition_number(rows: &[Vec<f64>]) -> f64 {
    let m = from_rows(rows);
    let sv = m.svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn smallest_singular_value(rows: &[Vec<f64>]) -> f64 {
    let m = from_rows(rows);
    let sv = m.svd(false, false).singular_values;
    sv.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// LU solve with partial pivoting. `None` when the factorization hits an
/// exactly singular pivot.
pub fn solve(rows: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let a = from_rows(rows);
    let b = DVector::from_column_slice(rhs);
    a.lu().solve(&b).map(|x| x.as_slice().to_vec())
}

/// Eigenvalues below this fraction of the largest magnitude count as zero
/// rank in the minimum-norm solve.
const RANK_CUTOFF: f64 = 1e-12;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps:
/// (eigenvalues, eigenvectors as columns). Bidiagonalization-based SVD can
/// misplace the null direction of a nearly singular matrix by ~1e-4 in
/// angle, which poisons consistency residuals checked against 1e-9; Jacobi
/// keeps eigenvectors at machine accuracy and these matrices are tiny.
fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut b = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..50 {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| 2.0 * b[(p, q)] * b[(p, q)])
            .sum();
        if off.sqrt() <= 1e-15 * norm {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if b[(p, q)] == 0.0 {
                    continue;
                }
                let tau = (b[(q, q)] - b[(p, p)]) / (2.0 * b[(p, q)]);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let bkp = b[(k, p)];
                    let bkq = b[(k, q)];
                    b[(k, p)] = c * bkp - s * bkq;
                    b[(k, q)] = s * bkp + c * bkq;
                }
                for k in 0..n {
                    let bpk = b[(p, k)];
                    let bqk = b[(q, k)];
                    b[(p, k)] = c * bpk - s * bqk;
                    b[(q, k)] = s * bpk + c * bqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| b[(i, i)]).collect(), v)
}

/// Result of a minimum-norm solve on a symmetric system.
pub struct MinNorm {
    pub x: Vec<f64>,
    /// 2-norm of `A x - b`; tells a consistent singular system from an
    /// inconsistent one.
    pub residual: f64,
    /// Unit eigenvector for the eigenvalue of smallest magnitude, present
    /// when that eigenvalue fell under the rank cutoff. Solutions stay
    /// solutions under shifts along this direction.
    pub null_direction: Option<Vec<f64>>,
}

/// Minimum-norm least-squares solution for a symmetric system. Every
/// matrix routed here (the mass matrix) is symmetric because mixed second
/// partials commute.
pub fn least_squares(rows: &[Vec<f64>], rhs: &[f64]) -> MinNorm {
    let a = from_rows(rows);
    let b = DVector::from_column_slice(rhs);
    let (vals, vecs) = jacobi_eigen(&a);
    let max = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut x = DVector::zeros(a.ncols());
    let mut dropped: Option<usize> = None;
    for (i, lam) in vals.iter().enumerate() {
        if lam.abs() > RANK_CUTOFF * max && max > 0.0 {
            let vi = vecs.column(i);
            x += vi * (vi.dot(&b) / lam);
        } else if dropped.map_or(true, |j| lam.abs() < vals[j].abs()) {
            dropped = Some(i);
        }
    }
    let residual = (&a * &x - &b).norm();
    MinNorm {
        x: x.as_slice().to_vec(),
        residual,
        null_direction: dropped.map(|i| vecs.column(i).as_slice().to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lu_solves_a_well_posed_system() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let x = solve(&a, &[5.0, 10.0]).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn exactly_singular_lu_returns_none() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(solve(&a, &[1.0, 3.0]).is_none());
    }

    #[test]
    fn condition_number_of_identity_is_one() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_relative_eq!(condition_number(&a), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn condition_number_tracks_scaling() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 1e-6]];
        assert_relative_eq!(condition_number(&a), 1e6, max_relative = 1e-10);
    }

    #[test]
    fn least_squares_on_consistent_singular_system_has_tiny_residual() {
        // Rank-1 projector; rhs lies in the column space.
        let a = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let out = least_squares(&a, &[2.0, 2.0]);
        assert!(out.residual < 1e-12, "residual {}", out.residual);
        // Minimum-norm solution splits the load evenly.
        assert_relative_eq!(out.x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(out.x[1], 1.0, epsilon = 1e-12);
        // The dropped direction is (1, -1) normalized, up to sign.
        let v = out.null_direction.expect("rank-1 matrix has a null vector");
        assert_relative_eq!(v[0] + v[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(v[0].hypot(v[1]), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn least_squares_reports_inconsistency() {
        let a = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let out = least_squares(&a, &[1.0, 3.0]);
        assert_relative_eq!(out.residual, (2.0_f64).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn least_squares_on_a_regular_matrix_reports_no_null_direction() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let out = least_squares(&a, &[5.0, 10.0]);
        assert!(out.null_direction.is_none());
        assert_relative_eq!(out.x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(out.x[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn smallest_singular_value_detects_rank_deficiency() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(smallest_singular_value(&a) < 1e-14);
    }

    #[test]
    fn least_squares_resolves_near_singular_consistent_system() {
        // Nearly singular block with a consistent rhs (the rhs is orthogonal
        // to the null direction to rounding level). The library SVD solution
        // leaves a residual near 1e-9 here; the Jacobi path must not.
        let a = vec![
            vec![-2.666674162155047e-6, 1.885626390107183e-3],
            vec![1.885626390107183e-3, -1.3333413333305655],
        ];
        let b = [-2.402992308466552e-7, 1.6991748659789252e-4];
        let out = least_squares(&a, &b);
        assert!(out.residual < 1e-12, "residual {}", out.residual);
    }
}
