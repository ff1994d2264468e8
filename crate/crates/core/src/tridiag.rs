//! Thomas algorithm for tridiagonal systems.

use crate::error::{Error, Result};

/// Solve `T x = rhs` where `T` has sub-diagonal `lower`, diagonal `diag` and
/// super-diagonal `upper` (`lower[i]` couples row `i+1` to column `i`).
///
/// No pivoting; intended for diagonally dominant systems.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if lower.len() + 1 != n || upper.len() + 1 != n || rhs.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: rhs.len() });
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot == 0.0 || !pivot.is_finite() {
        return Err(Error::StepFailure("zero pivot in tridiagonal solve".into()));
    }
    if n > 1 {
        c[0] = upper[0] / pivot;
    }
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i - 1] * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::StepFailure(format!("zero pivot in tridiagonal solve at row {i}")));
        }
        if i < n - 1 {
            c[i] = upper[i] / pivot;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / pivot;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn apply(lower: &[f64], diag: &[f64], upper: &[f64], x: &[f64]) -> Vec<f64> {
        let n = diag.len();
        (0..n)
            .map(|i| {
                let mut s = diag[i] * x[i];
                if i > 0 {
                    s += lower[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s += upper[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    #[test]
    fn identity_rows() {
        let x = solve_tridiagonal(&[0.0, 0.0], &[1.0, 1.0, 1.0], &[0.0, 0.0], &[3.0, -1.0, 2.0]).unwrap();
        assert_eq!(x, vec![3.0, -1.0, 2.0]);
    }

    #[test]
    fn zero_pivot_fails() {
        let e = solve_tridiagonal(&[1.0], &[0.0, 1.0], &[1.0], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(e, Error::StepFailure(_)));
    }

    #[test]
    fn size_mismatch() {
        assert!(solve_tridiagonal(&[1.0, 1.0], &[2.0, 2.0], &[1.0], &[1.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn residual_is_small(
            n in 2usize..40,
            seed in proptest::collection::vec(-1.0f64..1.0, 160),
        ) {
            let lower: Vec<f64> = seed[..n - 1].to_vec();
            let upper: Vec<f64> = seed[40..40 + n - 1].to_vec();
            let diag: Vec<f64> = (0..n).map(|i| 3.0 + seed[80 + i].abs()).collect();
            let rhs: Vec<f64> = seed[120..120 + n].to_vec();
            let x = solve_tridiagonal(&lower, &diag, &upper, &rhs).unwrap();
            let r = apply(&lower, &diag, &upper, &x);
            for i in 0..n {
                prop_assert!((r[i] - rhs[i]).abs() < 1e-12);
            }
        }
    }
}
