//! Dense helpers on top of nalgebra plus the log-domain reductions used
//! everywhere densities are combined.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Cholesky factorisation that reports the smallest eigenvalue on failure.
pub fn cholesky(m: &Matrix, context: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite {
            context: context.to_string(),
            min_eigenvalue: f64::NAN,
        });
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite {
        context: context.to_string(),
        min_eigenvalue: min_eigenvalue(m),
    })
}

pub fn min_eigenvalue(m: &Matrix) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// `log |A|` from a Cholesky factor of `A`.
pub fn chol_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// `v' A^{-1} v` using `A = L L'`, without forming the inverse.
pub fn chol_quad_inv(chol: &Cholesky<f64, Dyn>, v: &Vector) -> f64 {
    let w = chol
        .l_dirty()
        .solve_lower_triangular(v)
        .expect("cholesky factor has a positive diagonal");
    w.norm_squared()
}

pub fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

pub fn from_row_major(p: usize, values: &[f64]) -> Matrix {
    Matrix::from_row_slice(p, p, values)
}

pub fn to_row_major(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// `log Σ exp(x_i)`; `-inf` for an empty slice or when every term is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

/// `log |exp(a) - exp(b)|`, `-inf` when `a == b`.
pub fn log_abs_diff_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == lo {
        return f64::NEG_INFINITY;
    }
    let d = lo - hi;
    // log(1 - e^d), switching form near zero to keep precision
    let tail = if d > -std::f64::consts::LN_2 {
        (-d.exp_m1()).ln()
    } else {
        (-d.exp()).ln_1p()
    };
    hi + tail
}

pub fn ln_2pi() -> f64 {
    (2.0 * std::f64::consts::PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_neg_infinity() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn log_abs_diff_exp_matches_direct() {
        let direct = ((2.0f64).exp() - (1.5f64).exp()).ln();
        assert!((log_abs_diff_exp(2.0, 1.5) - direct).abs() < 1e-12);
        assert!((log_abs_diff_exp(1.5, 2.0) - direct).abs() < 1e-12);
        assert_eq!(log_abs_diff_exp(3.0, 3.0), f64::NEG_INFINITY);
        let tiny = log_abs_diff_exp(0.0, -1e-12);
        assert!((tiny - (1e-12f64).ln()).abs() < 1e-6);
    }

    #[test]
    fn cholesky_failure_reports_eigenvalue() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        match cholesky(&m, "test") {
            Err(Error::NotPositiveDefinite { min_eigenvalue, .. }) => {
                assert!((min_eigenvalue + 2.0).abs() < 1e-12)
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
