//! Independent reference computations for the test suites: a dense
//! interior-point QP solver, a Taylor-series matrix exponential and
//! finite-difference helpers, and generators of small random controller
//! instances. The oracles share no code with the library paths they check.

pub mod fd;
pub mod instances;
pub mod ipm;

use nalgebra::DMatrix;

/// `exp(A)` by scaling and squaring around a truncated Taylor series.
pub fn expm_taylor(a: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.abs().row_sum().max();
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let scaled = a * scale;
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..=terms {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Numerical rank from singular values above `rel_tol · s_max`.
pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = a.clone().singular_values();
    let max = s.max();
    s.iter().filter(|v| **v > rel_tol * max).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taylor_exponential_of_rotation_generator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let e = expm_taylor(&a, 30);
        let (c, s) = (1f64.cos(), 1f64.sin());
        let expected = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        assert!((e - expected).abs().max() < 1e-14);
    }
}
