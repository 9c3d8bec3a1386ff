//! Adaptive random-walk Metropolis.
//!
//! Gaussian proposals; during burn-in the proposal covariance is re-estimated
//! every `adapt_every` iterations as `(2.38²/p)·(C + 1e-6·I)` with `C` the
//! running sample covariance of the chain, then frozen for retained draws.

use nalgebra::Cholesky;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::moments::Chain;
use super::rng_from_seed;
use crate::linalg::{Matrix, Vector};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct RwmhConfig {
    /// Total iterations, burn-in included.
    pub n_iter: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Starting proposal shape before adaptation (identity when absent);
    /// scaled by `2.38²/p` like the adapted covariance.
    pub init_cov: Option<Matrix>,
    pub adapt_every: usize,
}

impl RwmhConfig {
    pub fn new(n_iter: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            n_iter,
            burn_in,
            seed,
            init_cov: None,
            adapt_every: 50,
        }
    }

    pub fn with_init_cov(mut self, cov: Matrix) -> Self {
        self.init_cov = Some(cov);
        self
    }
}

/// Running mean and scatter matrix (Welford).
struct Welford {
    n: usize,
    mean: Vector,
    scatter: Matrix,
}

impl Welford {
    fn new(p: usize) -> Self {
        Self {
            n: 0,
            mean: Vector::zeros(p),
            scatter: Matrix::zeros(p, p),
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let p = x.len();
        let mut delta = vec![0.0; p];
        for j in 0..p {
            delta[j] = x[j] - self.mean[j];
            self.mean[j] += delta[j] / self.n as f64;
        }
        for a in 0..p {
            let da = x[a] - self.mean[a];
            for b in 0..p {
                self.scatter[(a, b)] += delta[b] * da;
            }
        }
    }

    fn cov(&self) -> Matrix {
        let mut c = &self.scatter / (self.n.max(2) - 1) as f64;
        crate::linalg::symmetrize(&mut c);
        c
    }
}

fn proposal_factor(cov: &Matrix) -> Option<Matrix> {
    let p = cov.nrows();
    let scaled = (cov + Matrix::identity(p, p) * 1e-6) * (2.38 * 2.38 / p as f64);
    Cholesky::new(scaled).map(|c| c.l())
}

/// Runs the sampler from `init` on `log_target`; returns draws after burn-in.
pub fn rwmh_chain<F>(log_target: F, init: &[f64], config: &RwmhConfig) -> Result<Chain>
where
    F: Fn(&[f64]) -> f64,
{
    let p = init.len();
    if p == 0 {
        return Err(Error::Dimension("empty initial point".into()));
    }
    if config.n_iter <= config.burn_in {
        return Err(Error::Config(format!(
            "iterations ({}) must exceed burn-in ({})",
            config.n_iter, config.burn_in
        )));
    }
    let mut current = init.to_vec();
    let mut current_lp = log_target(&current);
    if !current_lp.is_finite() {
        return Err(Error::Initialization(format!(
            "log target is {current_lp} at the initial point"
        )));
    }
    let init_cov = config.init_cov.clone().unwrap_or_else(|| Matrix::identity(p, p));
    if init_cov.nrows() != p {
        return Err(Error::Dimension("initial proposal covariance has the wrong order".into()));
    }
    let mut factor = proposal_factor(&init_cov)
        .ok_or_else(|| Error::Initialization("initial proposal covariance is not positive definite".into()))?;

    let mut rng = rng_from_seed(config.seed);
    let kept = config.n_iter - config.burn_in;
    let mut draws = Vec::with_capacity(kept * p);
    let mut stats = Welford::new(p);
    let mut accepted_burn = 0usize;
    let mut accepted_kept = 0usize;
    let mut proposal = vec![0.0; p];
    let mut noise = vec![0.0; p];
    let min_accepted = 20 + 2 * p;
    // global step multiplier, tuned per window during burn-in so a badly
    // scaled starting shape still produces accepted moves
    let mut scale = 1.0f64;
    let mut window_accepted = 0usize;

    for it in 0..config.n_iter {
        for z in noise.iter_mut() {
            *z = StandardNormal.sample(&mut rng);
        }
        for a in 0..p {
            let mut step = 0.0;
            for b in 0..=a {
                step += factor[(a, b)] * noise[b];
            }
            proposal[a] = current[a] + scale * step;
        }
        let lp = log_target(&proposal);
        let u: f64 = rng.random();
        // non-finite evaluations are rejected
        if lp.is_finite() && u.ln() < lp - current_lp {
            current.copy_from_slice(&proposal);
            current_lp = lp;
            if it < config.burn_in {
                accepted_burn += 1;
                window_accepted += 1;
            } else {
                accepted_kept += 1;
            }
        }
        if it < config.burn_in {
            stats.push(&current);
            if (it + 1) % config.adapt_every == 0 {
                let rate = window_accepted as f64 / config.adapt_every as f64;
                window_accepted = 0;
                if rate < 0.15 {
                    scale *= 0.6;
                } else if rate > 0.45 {
                    scale = (scale * 1.5).min(1.0);
                }
                if accepted_burn >= min_accepted && stats.n > 2 * p {
                    if let Some(f) = proposal_factor(&stats.cov()) {
                        factor = f;
                    }
                }
            }
        } else {
            draws.extend_from_slice(&current);
        }
    }

    Ok(Chain {
        draws,
        dim: p,
        burn_in: config.burn_in,
        acceptance_rate: Some(accepted_kept as f64 / kept as f64),
        seed: config.seed,
    })
}
