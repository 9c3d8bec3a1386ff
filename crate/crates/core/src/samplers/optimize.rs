//! Damped Newton search for the subposterior mode, used to start chains and
//! to shape initial proposals.

use crate::linalg::{Matrix, Vector};
use crate::model::{Design, Noise, PriorEval, Subposterior};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct Mode {
    pub theta: Vec<f64>,
    pub log_density: f64,
    /// Negative Hessian at the mode, regularised to be positive definite.
    pub precision: Matrix,
}

impl Mode {
    pub fn covariance(&self) -> Matrix {
        nalgebra::Cholesky::new(self.precision.clone())
            .map(|c| c.inverse())
            .unwrap_or_else(|| Matrix::identity(self.theta.len(), self.theta.len()))
    }
}

/// Prior mean (zero for a Laplace prior) and, for a sampled noise scale,
/// `log σ = ½ log(y'y / n)`.
pub fn initial_point_for(target: &Subposterior) -> Vec<f64> {
    let mut theta = match &target.prior {
        PriorEval::Normal { mean, .. } => mean.iter().copied().collect(),
        PriorEval::Laplace { p, .. } => vec![0.0; *p],
    };
    if let Design::Linear {
        noise: Noise::LogNormal { .. },
        yty,
        n,
        ..
    } = &target.design
    {
        theta.push(0.5 * (yty / *n as f64).max(1e-8).ln());
    }
    theta
}

pub fn find_mode(target: &Subposterior, init: &[f64]) -> Result<Mode> {
    let d = target.dim();
    if init.len() != d {
        return Err(Error::Dimension(format!("initial point has length {} for dimension {d}", init.len())));
    }
    let reg = target.subprior_precision();
    let mut theta = Vector::from_column_slice(init);
    let mut f = target.log_density(theta.as_slice());
    if !f.is_finite() {
        return Err(Error::Initialization("log density is not finite at the starting point".into()));
    }
    for _ in 0..200 {
        let (g, h) = target.grad_hess(theta.as_slice());
        let neg_h = -h;
        let step = newton_step(&neg_h, &reg, &g);
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let cand = &theta + &step * scale;
            let fc = target.log_density(cand.as_slice());
            if fc.is_finite() && fc >= f {
                let gain = fc - f;
                theta = cand;
                f = fc;
                improved = gain > 1e-13 * (1.0 + f.abs());
                break;
            }
            scale *= 0.5;
        }
        if !improved || step.norm() * scale < 1e-12 * (1.0 + theta.norm()) {
            break;
        }
    }
    let (_, h) = target.grad_hess(theta.as_slice());
    let mut precision = -h;
    crate::linalg::symmetrize(&mut precision);
    if nalgebra::Cholesky::new(precision.clone()).is_none() {
        precision += &reg;
    }
    if nalgebra::Cholesky::new(precision.clone()).is_none() {
        precision = reg;
    }
    Ok(Mode {
        theta: theta.iter().copied().collect(),
        log_density: f,
        precision,
    })
}

fn newton_step(neg_h: &Matrix, reg: &Matrix, g: &Vector) -> Vector {
    let d = g.len();
    if let Some(c) = nalgebra::Cholesky::new(neg_h.clone()) {
        return c.solve(g);
    }
    let mut damping = 1.0;
    for _ in 0..40 {
        let m = neg_h + reg * damping + Matrix::identity(d, d) * (1e-8 * damping);
        if let Some(c) = nalgebra::Cholesky::new(m) {
            return c.solve(g);
        }
        damping *= 4.0;
    }
    g * 1e-3
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dataset, Likelihood, ModelSpec, Prior};

    #[test]
    fn linear_mode_is_ridge_solution() {
        let data = Dataset::new(vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], vec![1.0, 2.0, 2.5], 2).unwrap();
        let model = ModelSpec::new(
            "lin",
            Likelihood::LinearGaussianKnownVar { noise_var: 1.0 },
            Prior::isotropic_normal(2, 1.0),
            2,
        );
        let sub = Subposterior::new(&model, &data, 2).unwrap();
        let mode = find_mode(&sub, &[0.0, 0.0]).unwrap();
        // (X'X + I/2) θ = X'y
        let a = Matrix::from_row_slice(2, 2, &[2.5, 1.0, 1.0, 2.5]);
        let b = Vector::from_column_slice(&[3.5, 4.5]);
        let exact = a.clone().cholesky().unwrap().solve(&b);
        assert!((mode.theta[0] - exact[0]).abs() < 1e-10);
        assert!((mode.theta[1] - exact[1]).abs() < 1e-10);
        assert!((mode.precision - a).abs().max() < 1e-10);
    }
}
