use crate::linalg::{self, Matrix, Vector};
use crate::{Error, Result};

/// Retained (post burn-in) draws of one chain, row-major `len × dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub draws: Vec<f64>,
    pub dim: usize,
    pub burn_in: usize,
    /// Acceptance rate over the retained iterations; `None` for Gibbs.
    pub acceptance_rate: Option<f64>,
    pub seed: u64,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.draws.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.draws[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks_exact(self.dim)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }
}

/// Mean and covariance of a Gaussian approximation.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMoments {
    pub mean: Vector,
    pub cov: Matrix,
}

impl GaussianMoments {
    /// Validates symmetry (to 1e-10, relative) and positive definiteness.
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        let p = mean.len();
        if cov.nrows() != p || cov.ncols() != p {
            return Err(Error::Dimension(format!(
                "covariance is {}x{} for a mean of length {p}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        for i in 0..p {
            for j in 0..i {
                let scale = 1.0 + cov[(i, j)].abs().max(cov[(j, i)].abs());
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::Validation("covariance is not symmetric".into()));
                }
            }
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Validation("mean is not finite".into()));
        }
        linalg::cholesky(&cov, "covariance")?;
        Ok(Self { mean, cov })
    }

    pub fn from_slices(mean: &[f64], cov_row_major: &[f64]) -> Result<Self> {
        let p = mean.len();
        if cov_row_major.len() != p * p {
            return Err(Error::Dimension(format!(
                "{} covariance entries for dimension {p}",
                cov_row_major.len()
            )));
        }
        Self::new(Vector::from_column_slice(mean), linalg::from_row_major(p, cov_row_major))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Marginal of a subset of coordinates.
    pub fn marginal(&self, idx: &[usize]) -> Self {
        Self {
            mean: Vector::from_iterator(idx.len(), idx.iter().map(|&i| self.mean[i])),
            cov: Matrix::from_fn(idx.len(), idx.len(), |a, b| self.cov[(idx[a], idx[b])]),
        }
    }
}

/// Sample mean and unbiased `(N − 1)` covariance of the retained draws.
pub fn chain_moments(chain: &Chain) -> Result<GaussianMoments> {
    let n = chain.len();
    let p = chain.dim;
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 draws, got {n}")));
    }
    let mut mean = Vector::zeros(p);
    for row in chain.rows() {
        for j in 0..p {
            mean[j] += row[j];
        }
    }
    mean /= n as f64;
    let mut cov = Matrix::zeros(p, p);
    let mut d = vec![0.0; p];
    for row in chain.rows() {
        for j in 0..p {
            d[j] = row[j] - mean[j];
        }
        for a in 0..p {
            for b in 0..=a {
                cov[(a, b)] += d[a] * d[b];
            }
        }
    }
    cov /= (n - 1) as f64;
    for a in 0..p {
        for b in 0..a {
            cov[(b, a)] = cov[(a, b)];
        }
    }
    linalg::symmetrize(&mut cov);
    linalg::cholesky(&cov, "chain covariance")?;
    Ok(GaussianMoments { mean, cov })
}

/// Minimum over coordinates of the effective sample size, estimated by
/// non-overlapping batch means with batches of `⌊√N⌋` draws.
pub fn effective_sample_size(chain: &Chain) -> f64 {
    let n = chain.len();
    if n < 4 {
        return n as f64;
    }
    (0..chain.dim)
        .map(|j| ess_batch_means(&chain.column(j)))
        .fold(f64::INFINITY, f64::min)
}

fn ess_batch_means(x: &[f64]) -> f64 {
    let n = x.len();
    let b = (n as f64).sqrt().floor() as usize;
    let a = n / b;
    let used = a * b;
    let mean = x[..used].iter().sum::<f64>() / used as f64;
    let var = x[..used].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (used - 1) as f64;
    if var <= 0.0 || a < 2 {
        return n as f64;
    }
    let bm_var = x[..used]
        .chunks_exact(b)
        .map(|c| {
            let m = c.iter().sum::<f64>() / b as f64;
            (m - mean) * (m - mean)
        })
        .sum::<f64>()
        * b as f64
        / (a - 1) as f64;
    if bm_var <= 0.0 {
        return n as f64;
    }
    (n as f64 * var / bm_var).min(n as f64)
}
