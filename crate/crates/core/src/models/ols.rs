//! Least squares through the normal equations.
//!
//! Designs here are tiny (at most 5 columns, 7 or 8 rows), so `XᵀX` is
//! formed explicitly and diagonalised with cyclic Jacobi rotations. The
//! pseudo-inverse of the eigen-decomposition yields the minimum-norm
//! solution whenever the design is rank deficient, which keeps degenerate
//! windows (constant lags, all-zero exogenous columns) well defined.

#![allow(clippy::needless_range_loop)]

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub residual_sse: f64,
    pub rank_deficient: bool,
}

impl LeastSquares {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.coefficients.iter().zip(row).map(|(b, x)| b * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.coefficients.iter().all(|c| c.is_finite()) && self.residual_sse.is_finite()
    }
}

/// Minimum-norm least-squares fit of `target` on the rows of `design`.
///
/// Every row must have the same width `p ≥ 1`.
pub fn least_squares(design: &[Vec<f64>], target: &[f64]) -> LeastSquares {
    assert_eq!(design.len(), target.len(), "design/target length mismatch");
    let p = design.first().map_or(0, Vec::len);
    assert!(p > 0, "empty design");
    assert!(design.iter().all(|r| r.len() == p), "ragged design");

    let mut gram = vec![vec![0.0; p]; p];
    let mut rhs = vec![0.0; p];
    for (row, &y) in design.iter().zip(target) {
        for i in 0..p {
            rhs[i] += row[i] * y;
            for j in i..p {
                gram[i][j] += row[i] * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[i][j] = gram[j][i];
        }
    }

    let (eigvals, eigvecs) = symmetric_eigen(gram);
    let max_eig = eigvals.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let cutoff = max_eig * RANK_TOL * p as f64;
    let mut rank_deficient = false;
    let mut coefficients = vec![0.0; p];
    for k in 0..p {
        let lambda = eigvals[k];
        if lambda <= cutoff {
            rank_deficient = true;
            continue;
        }
        // component of rhs along eigenvector k
        let proj: f64 = (0..p).map(|i| eigvecs[i][k] * rhs[i]).sum();
        let scale = proj / lambda;
        for i in 0..p {
            coefficients[i] += scale * eigvecs[i][k];
        }
    }

    let residual_sse = design
        .iter()
        .zip(target)
        .map(|(row, y)| {
            let fit: f64 = row.iter().zip(&coefficients).map(|(x, b)| x * b).sum();
            (y - fit).powi(2)
        })
        .sum();

    LeastSquares {
        coefficients,
        residual_sse,
        rank_deficient,
    }
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
///
/// Returns eigenvalues and a matrix whose columns are the matching
/// orthonormal eigenvectors.
pub(crate) fn symmetric_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= f64::EPSILON * f64::EPSILON * diag || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                // signum(0.0) is 1.0, so theta == 0 rotates by 45 degrees
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        // y = 2 + 3x
        let design: Vec<Vec<f64>> = (0..5).map(|x| vec![1.0, x as f64]).collect();
        let target: Vec<f64> = (0..5).map(|x| 2.0 + 3.0 * x as f64).collect();
        let fit = least_squares(&design, &target);
        assert!(!fit.rank_deficient);
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 3.0).abs() < 1e-12);
        assert!(fit.residual_sse < 1e-20);
    }

    #[test]
    fn zero_column_gets_zero_coefficient() {
        let design: Vec<Vec<f64>> = (0..6).map(|x| vec![1.0, x as f64, 0.0]).collect();
        let target: Vec<f64> = (0..6).map(|x| 1.0 - 0.5 * x as f64).collect();
        let fit = least_squares(&design, &target);
        assert!(fit.rank_deficient);
        assert_eq!(fit.coefficients[2], 0.0);
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((fit.coefficients[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn duplicated_column_splits_weight() {
        // Minimum-norm solution of y = b1·x + b2·x with y = 2x is b1 = b2 = 1.
        let design: Vec<Vec<f64>> = (1..5).map(|x| vec![x as f64, x as f64]).collect();
        let target: Vec<f64> = (1..5).map(|x| 2.0 * x as f64).collect();
        let fit = least_squares(&design, &target);
        assert!(fit.rank_deficient);
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_diagonalises() {
        let a = vec![vec![4.0, 1.0, 2.0], vec![1.0, 3.0, 0.5], vec![2.0, 0.5, 5.0]];
        let (vals, vecs) = symmetric_eigen(a.clone());
        for k in 0..3 {
            for i in 0..3 {
                let av: f64 = (0..3).map(|j| a[i][j] * vecs[j][k]).sum();
                assert!((av - vals[k] * vecs[i][k]).abs() < 1e-12);
            }
        }
        let trace: f64 = vals.iter().sum();
        assert!((trace - 12.0).abs() < 1e-12);
    }
}
