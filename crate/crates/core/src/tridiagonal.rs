//! Thomas algorithm for tridiagonal systems sharing one matrix across
//! several interleaved right-hand sides.

use crate::error::{Error, Result};

/// Solves `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]` in
/// place for `width` interleaved systems (`rhs[i * width + c]`).
/// `lower[0]` and `upper[n-1]` are ignored.
pub fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &mut [f64],
    width: usize,
) -> Result<()> {
    let n = diag.len();
    assert!(lower.len() == n && upper.len() == n && rhs.len() == n * width);
    if n == 0 {
        return Ok(());
    }
    let mut c_prime = vec![0.0; n];
    let mut pivot = diag[0];
    for i in 0..n {
        if i > 0 {
            pivot = diag[i] - lower[i] * c_prime[i - 1];
        }
        if !(pivot.is_finite() && pivot > 0.0) {
            return Err(Error::Numeric(format!("non-positive pivot {pivot} in row {i}")));
        }
        c_prime[i] = upper[i] / pivot;
        for c in 0..width {
            let prev = if i > 0 { rhs[(i - 1) * width + c] } else { 0.0 };
            let l = if i > 0 { lower[i] } else { 0.0 };
            rhs[i * width + c] = (rhs[i * width + c] - l * prev) / pivot;
        }
    }
    for i in (0..n - 1).rev() {
        for c in 0..width {
            rhs[i * width + c] -= c_prime[i] * rhs[(i + 1) * width + c];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_small_system_for_two_right_hand_sides() {
        let lower = [0.0, -1.0, -1.0, -1.0];
        let diag = [4.0, 4.0, 4.0, 4.0];
        let upper = [-1.0, -1.0, -1.0, 0.0];
        let x = [[1.0, -2.0], [0.5, 3.0], [2.0, 0.0], [-1.0, 1.0]];
        let mut rhs = vec![0.0; 8];
        for i in 0..4 {
            for c in 0..2 {
                let mut v = diag[i] * x[i][c];
                if i > 0 {
                    v += lower[i] * x[i - 1][c];
                }
                if i < 3 {
                    v += upper[i] * x[i + 1][c];
                }
                rhs[i * 2 + c] = v;
            }
        }
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs, 2).unwrap();
        for i in 0..4 {
            for c in 0..2 {
                assert!((rhs[i * 2 + c] - x[i][c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rejects_a_singular_pivot() {
        let mut rhs = vec![1.0, 1.0];
        let r = solve_tridiagonal(&[0.0, 1.0], &[1.0, 1.0], &[1.0, 0.0], &mut rhs, 1);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
