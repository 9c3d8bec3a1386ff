//! Polya-Gamma Gibbs sampler for logistic regression on one shard.
//!
//! With `κ = y − ½`, `Ω = diag(z)` and the subprior `N(m0, S·V0)`:
//!
//! ```text
//! θ | z ~ N(Λ⁻¹η, Λ⁻¹),   Λ = X'ΩX + V0⁻¹/S,   η = X'κ + V0⁻¹m0/S
//! z_j | θ ~ PG(1, x_j θ)
//! ```

use rand_distr::{Distribution, StandardNormal};

use super::moments::Chain;
use super::stream::ConditionalGaussianStream;
use super::{rng_from_seed, sample_pg};
use crate::linalg::{Matrix, Vector};
use crate::model::{Design, ModelSpec, PriorEval, Shard};
use crate::{Error, Result};

/// Returns the retained θ draws and, for each of them, the precision of the
/// conditional Gaussian it was drawn from.
pub fn pg_gibbs_logistic(
    shard: &Shard,
    model: &ModelSpec,
    splits: usize,
    n_iter: usize,
    burn_in: usize,
    seed: u64,
) -> Result<(Chain, ConditionalGaussianStream)> {
    if !model.is_logistic_normal() {
        return Err(Error::Config(format!(
            "model {}: Polya-Gamma Gibbs needs a logistic likelihood with a normal prior",
            model.model_id
        )));
    }
    if splits == 0 {
        return Err(Error::Domain("number of splits must be at least 1".into()));
    }
    if n_iter <= burn_in {
        return Err(Error::Config(format!(
            "iterations ({n_iter}) must exceed burn-in ({burn_in})"
        )));
    }
    model.validate_for(&shard.data)?;
    let (x, y, p) = match Design::new(&model.likelihood, &shard.data, &model.columns(shard.data.p)) {
        Design::Logistic { x, y, p } => (x, y, p),
        Design::Linear { .. } => unreachable!(),
    };
    let (prior_mean, prior_prec) = match PriorEval::new(&model.prior, model.dim)? {
        PriorEval::Normal { mean, prec, .. } => (mean, prec),
        PriorEval::Laplace { .. } => unreachable!(),
    };
    let inv_s = 1.0 / splits as f64;
    let sub_prec = &prior_prec * inv_s;

    let mut eta = &sub_prec * &prior_mean;
    for (row, &yi) in x.chunks_exact(p).zip(&y) {
        let kappa = yi - 0.5;
        for a in 0..p {
            eta[a] += row[a] * kappa;
        }
    }

    let mut rng = rng_from_seed(seed);
    let kept = n_iter - burn_in;
    let mut draws = Vec::with_capacity(kept * p);
    let mut stream = ConditionalGaussianStream::new(eta.iter().copied().collect());
    stream.precisions.reserve(kept * p * p);

    let mut theta = prior_mean.clone();
    let mut lam = Matrix::zeros(p, p);
    for it in 0..n_iter {
        lam.copy_from(&sub_prec);
        for row in x.chunks_exact(p) {
            let psi: f64 = row.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
            let w = sample_pg(psi, &mut rng);
            for a in 0..p {
                let wa = w * row[a];
                for b in 0..=a {
                    lam[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                lam[(b, a)] = lam[(a, b)];
            }
        }
        let chol = nalgebra::Cholesky::new(lam.clone()).ok_or_else(|| {
            Error::NotPositiveDefinite {
                context: format!("shard {}: conditional precision at iteration {it}", shard.shard_id),
                min_eigenvalue: crate::linalg::min_eigenvalue(&lam),
            }
            .in_shard(shard.shard_id)
        })?;
        let mean = chol.solve(&eta);
        let noise = Vector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let step = chol
            .l_dirty()
            .tr_solve_lower_triangular(&noise)
            .expect("cholesky factor has a positive diagonal");
        theta = mean + step;
        if it >= burn_in {
            draws.extend(theta.iter());
            stream.push(&lam);
        }
    }

    Ok((
        Chain {
            draws,
            dim: p,
            burn_in,
            acceptance_rate: None,
            seed,
        },
        stream,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dataset, Likelihood, Prior};
    use crate::samplers::chain_moments;

    fn logistic_model(p: usize, var: f64) -> ModelSpec {
        ModelSpec::new("lg", Likelihood::Logistic, Prior::isotropic_normal(p, var), p)
    }

    #[test]
    fn flat_likelihood_recovers_subprior() {
        let n = 50;
        let data = Dataset::new(vec![0.0; n * 2], (0..n).map(|i| (i % 2) as f64).collect(), 2).unwrap();
        let shard = Shard::whole(&data);
        let s = 3;
        let model = ModelSpec::new(
            "lg",
            Likelihood::Logistic,
            Prior::Normal {
                mean: vec![1.0, -2.0],
                cov: vec![vec![1.0, 0.4], vec![0.4, 0.5]],
            },
            2,
        );
        let (chain, stream) = pg_gibbs_logistic(&shard, &model, s, 20_000, 100, 8).unwrap();
        let m = chain_moments(&chain).unwrap();
        // the θ draws are iid here, so the MC standard error is sd/√N
        let sds = [3.0f64.sqrt(), 1.5f64.sqrt()];
        let n_kept = chain.len() as f64;
        for (j, (mu, v)) in [(1.0, 3.0), (-2.0, 1.5)].iter().enumerate() {
            assert!((m.mean[j] - mu).abs() < 3.0 * sds[j] / n_kept.sqrt(), "mean {j}");
            // var of sample variance ≈ 2σ⁴/N
            assert!((m.cov[(j, j)] - v).abs() < 3.0 * v * (2.0 / n_kept).sqrt(), "var {j}");
        }
        // var of the sample covariance ≈ (σ₁₂² + σ₁²σ₂²)/N
        let c12 = 1.2;
        assert!((m.cov[(0, 1)] - c12).abs() < 3.0 * ((c12 * c12 + 4.5) / n_kept).sqrt());
        assert_eq!(stream.len(), chain.len());
    }

    #[test]
    fn header_eta_matches_definition() {
        let data = Dataset::new(vec![0.5, 1.0, -1.5, 2.0, 0.25, -0.75], vec![1.0, 0.0, 1.0], 2).unwrap();
        let shard = Shard::whole(&data);
        let model = ModelSpec::new(
            "lg",
            Likelihood::Logistic,
            Prior::Normal {
                mean: vec![0.3, -0.2],
                cov: vec![vec![2.0, 0.0], vec![0.0, 4.0]],
            },
            2,
        );
        let s = 2;
        let (_, stream) = pg_gibbs_logistic(&shard, &model, s, 10, 0, 1).unwrap();
        // rows (0.5, 1), (-1.5, 2), (0.25, -0.75) with κ = (½, -½, ½)
        let expect = [
            0.5 * 0.5 + 1.5 * 0.5 + 0.25 * 0.5 + 0.3 / 2.0 / 2.0,
            1.0 * 0.5 - 2.0 * 0.5 - 0.75 * 0.5 - 0.2 / 4.0 / 2.0,
        ];
        for (a, b) in stream.eta.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn one_dimensional_posterior_mean_near_map() {
        use rand::Rng;
        let mut rng = rng_from_seed(21);
        let n = 200;
        let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| (rng.random::<f64>() < crate::model::sigmoid(xi)) as u8 as f64)
            .collect();
        let data = Dataset::new(x, y, 1).unwrap();
        let model = logistic_model(1, 1.0);
        let sub = crate::model::Subposterior::new(&model, &data, 1).unwrap();
        // MAP by grid search, independent of the sampler
        let map = (0..40_001)
            .map(|i| -4.0 + i as f64 * 2e-4)
            .max_by(|a, b| sub.log_density(&[*a]).partial_cmp(&sub.log_density(&[*b])).unwrap())
            .unwrap();
        let (chain, _) = pg_gibbs_logistic(&Shard::whole(&data), &model, 1, 6_000, 1_000, 3).unwrap();
        let m = chain_moments(&chain).unwrap();
        assert!((m.mean[0] - map).abs() < 0.3, "mean {} map {map}", m.mean[0]);
    }

    #[test]
    fn rejects_non_logistic_models() {
        let data = Dataset::new(vec![1.0], vec![0.3], 1).unwrap();
        let model = ModelSpec::new(
            "lin",
            Likelihood::LinearGaussianKnownVar { noise_var: 1.0 },
            Prior::isotropic_normal(1, 1.0),
            1,
        );
        assert!(matches!(
            pg_gibbs_logistic(&Shard::whole(&data), &model, 1, 10, 0, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let data = Dataset::new(vec![0.5, -1.0, 1.5, 0.2], vec![1.0, 0.0, 1.0, 1.0], 1).unwrap();
        let shard = Shard::whole(&data);
        let model = logistic_model(1, 1.0);
        let a = pg_gibbs_logistic(&shard, &model, 2, 500, 100, 42).unwrap();
        let b = pg_gibbs_logistic(&shard, &model, 2, 500, 100, 42).unwrap();
        assert_eq!(a, b);
    }
}
