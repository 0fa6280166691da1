//! Small dense linear algebra used by the Newton solvers and the descriptor
//! reduction. Systems here are tiny (stage count times state dimension), so
//! straightforward O(n^3) routines with pivoting are entirely adequate.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Solve A x = b in place by Gaussian elimination with partial pivoting.
/// `a` is row-major n x n and is destroyed; `b` becomes the solution.
pub(crate) fn lu_solve(a: &mut [f64], n: usize, b: &mut [f64], context: &str) -> Result<()> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let mut perm: Vec<usize> = (0..n).collect();

    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_mag = a[perm[col] * n + col].abs();
        for r in col + 1..n {
            let mag = a[perm[r] * n + col].abs();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = r;
            }
        }
        if pivot_mag == 0.0 {
            return Err(Error::NumericalFailure(format!(
                "singular matrix in {context} (pivot column {col})"
            )));
        }
        perm.swap(col, pivot_row);
        let p = perm[col];
        let pivot = a[p * n + col];
        for r in col + 1..n {
            let row = perm[r];
            let factor = a[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            a[row * n + col] = 0.0;
            for c in col + 1..n {
                a[row * n + c] -= factor * a[p * n + c];
            }
            b[row] -= factor * b[p];
        }
    }

    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let p = perm[col];
        let mut s = b[p];
        for c in col + 1..n {
            s -= a[p * n + c] * x[c];
        }
        x[col] = s / a[p * n + col];
    }
    b.copy_from_slice(&x);
    Ok(())
}

/// Solve A X = B for an n x k right-hand side. `a` is consumed.
pub(crate) fn lu_solve_matrix(a: &Tensor, b: &Tensor, context: &str) -> Result<Tensor> {
    let n = a.rows();
    let k = b.cols();
    let mut out = Tensor::zeros(n, k);
    for col in 0..k {
        let mut a_work = a.data().to_vec();
        let mut rhs: Vec<f64> = (0..n).map(|r| b.get(r, col)).collect();
        lu_solve(&mut a_work, n, &mut rhs, context)?;
        for r in 0..n {
            out.set(r, col, rhs[r]);
        }
    }
    Ok(out)
}

pub(crate) fn invert(a: &Tensor, context: &str) -> Result<Tensor> {
    lu_solve_matrix(a, &Tensor::identity(a.rows()), context)
}

/// Result of Gaussian elimination with complete (total) pivoting:
/// P A Q = L U with L unit lower triangular and U upper triangular whose
/// first `rank` diagonal entries are the pivots. `trailing_max` is the
/// largest absolute entry left in the submatrix after the final pivot.
pub(crate) struct CompletePivotLu {
    pub l: Tensor,
    pub u: Tensor,
    pub row_perm: Vec<usize>,
    pub col_perm: Vec<usize>,
    pub rank: usize,
    pub trailing_max: f64,
}

pub(crate) fn complete_pivot_lu(m: &Tensor, pivot_tol: f64) -> CompletePivotLu {
    let n = m.rows();
    debug_assert_eq!(n, m.cols());
    let mut work = m.clone();
    let mut l = Tensor::identity(n);
    let mut row_perm: Vec<usize> = (0..n).collect();
    let mut col_perm: Vec<usize> = (0..n).collect();
    let mut rank = n;
    let mut trailing_max = 0.0;

    for k in 0..n {
        let mut best = (k, k);
        let mut best_mag = 0.0f64;
        for r in k..n {
            for c in k..n {
                let mag = work.get(r, c).abs();
                if mag > best_mag {
                    best_mag = mag;
                    best = (r, c);
                }
            }
        }
        if best_mag <= pivot_tol {
            rank = k;
            trailing_max = best_mag;
            break;
        }
        let (pr, pc) = best;
        swap_rows(&mut work, k, pr);
        swap_cols(&mut work, k, pc);
        row_perm.swap(k, pr);
        col_perm.swap(k, pc);
        // Keep the already-computed multipliers consistent with row swaps.
        for c in 0..k {
            let tmp = l.get(k, c);
            l.set(k, c, l.get(pr, c));
            l.set(pr, c, tmp);
        }

        let pivot = work.get(k, k);
        for r in k + 1..n {
            let factor = work.get(r, k) / pivot;
            l.set(r, k, factor);
            if factor == 0.0 {
                continue;
            }
            work.set(r, k, 0.0);
            for c in k + 1..n {
                work.set(r, c, work.get(r, c) - factor * work.get(k, c));
            }
        }
    }

    for r in 0..n {
        for c in 0..r.min(n) {
            work.set(r, c, 0.0);
        }
    }
    CompletePivotLu {
        l,
        u: work,
        row_perm,
        col_perm,
        rank,
        trailing_max,
    }
}

fn swap_rows(t: &mut Tensor, a: usize, b: usize) {
    if a == b {
        return;
    }
    for c in 0..t.cols() {
        let tmp = t.get(a, c);
        t.set(a, c, t.get(b, c));
        t.set(b, c, tmp);
    }
}

fn swap_cols(t: &mut Tensor, a: usize, b: usize) {
    if a == b {
        return;
    }
    for r in 0..t.rows() {
        let tmp = t.get(r, a);
        t.set(r, a, t.get(r, b));
        t.set(r, b, tmp);
    }
}

/// Smallest singular value via cyclic Jacobi iteration on A^T A.
/// Matrices here are at most a few dozen rows, so this is plenty fast and
/// deterministic.
pub(crate) fn sigma_min(a: &Tensor) -> f64 {
    let n = a.cols();
    if n == 0 {
        return 0.0;
    }
    // Gram matrix.
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for r in 0..a.rows() {
                s += a.get(r, i) * a.get(r, j);
            }
            g[i * n + j] = s;
        }
    }

    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(g[p * n + q].abs());
            }
        }
        let scale = (0..n).fold(0.0f64, |m, i| m.max(g[i * n + i].abs()));
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = g[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = g[p * n + p];
                let aqq = g[q * n + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let gkp = g[k * n + p];
                    let gkq = g[k * n + q];
                    g[k * n + p] = c * gkp - s * gkq;
                    g[k * n + q] = s * gkp + c * gkq;
                }
                for k in 0..n {
                    let gpk = g[p * n + k];
                    let gqk = g[q * n + k];
                    g[p * n + k] = c * gpk - s * gqk;
                    g[q * n + k] = s * gpk + c * gqk;
                }
            }
        }
    }

    let mut min_eig = f64::INFINITY;
    for i in 0..n {
        min_eig = min_eig.min(g[i * n + i]);
    }
    min_eig.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::matmul_nn;

    #[test]
    fn lu_solves_small_system() {
        let mut a = vec![2.0, 1.0, -1.0, -3.0, -1.0, 2.0, -2.0, 1.0, 2.0];
        let mut b = vec![8.0, -11.0, -3.0];
        lu_solve(&mut a, 3, &mut b, "test").unwrap();
        assert!((b[0] - 2.0).abs() < 1e-12);
        assert!((b[1] - 3.0).abs() < 1e-12);
        assert!((b[2] - -1.0).abs() < 1e-12);
    }

    #[test]
    fn lu_rejects_singular() {
        let mut a = vec![1.0, 2.0, 2.0, 4.0];
        let mut b = vec![1.0, 2.0];
        assert!(lu_solve(&mut a, 2, &mut b, "test").is_err());
    }

    #[test]
    fn invert_round_trips() {
        let a = Tensor::from_vec(3, 3, vec![4.0, 7.0, 2.0, 3.0, 6.0, 1.0, 2.0, 5.0, 3.0]).unwrap();
        let inv = invert(&a, "test").unwrap();
        let eye = matmul_nn(&a, &inv);
        for r in 0..3 {
            for c in 0..3 {
                let expected = if r == c { 1.0 } else { 0.0 };
                assert!((eye.get(r, c) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn complete_pivot_reconstructs_and_ranks() {
        let m = Tensor::from_vec(3, 3, vec![1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.5, 1.0, 2.0]).unwrap();
        let lu = complete_pivot_lu(&m, 1e-12);
        assert_eq!(lu.rank, 2);
        // P M Q = L U: check entrywise.
        let prod = matmul_nn(&lu.l, &lu.u);
        for r in 0..3 {
            for c in 0..3 {
                let got = prod.get(r, c);
                let want = m.get(lu.row_perm[r], lu.col_perm[c]);
                assert!((got - want).abs() < 1e-12, "({r},{c}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn sigma_min_of_diagonal() {
        let a = Tensor::diag(&[3.0, 0.25, 7.0]);
        assert!((sigma_min(&a) - 0.25).abs() < 1e-10);
        let rank_deficient = Tensor::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(sigma_min(&rank_deficient) < 1e-12);
    }
}
