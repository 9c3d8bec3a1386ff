//! Reversible-jump variable selection on one shard and the distributed
//! combination of per-shard model odds.
//!
//! Each iteration makes one random-walk update of the current coefficients
//! and one jump that toggles a uniformly chosen free feature. An entering
//! coefficient is drawn from its marginal subprior and the jump is accepted
//! with the usual reversible-jump ratio (unit Jacobian).

use std::collections::{BTreeMap, HashMap};

use nalgebra::Cholesky;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::evidence::log_gaussian_product_integral;
use crate::linalg::{self, ln_2pi, Matrix, Vector};
use crate::model::{log_alpha, Design, Likelihood, ModelSpec, Prior, Shard, Subposterior};
use crate::samplers::{find_mode, initial_point_for, rng_from_seed, GaussianMoments};
use crate::{Error, Result};

pub const MAX_FEATURES: usize = 25;
pub const DEFAULT_MIN_VISITS: u64 = 500;
pub const DEFAULT_ITERATIONS: usize = 100_000;

/// Bit vector over features, written most significant first as a string of
/// `0`/`1` with feature 0 leftmost.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelIndicator(pub Vec<bool>);

impl ModelIndicator {
    pub fn from_active(p: usize, active: &[usize]) -> Result<Self> {
        let mut bits = vec![false; p];
        for &j in active {
            if j >= p {
                return Err(Error::Config(format!("feature {j} out of range for {p} features")));
            }
            bits[j] = true;
        }
        Ok(Self(bits))
    }

    pub fn key(&self) -> String {
        self.0.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn from_key(key: &str) -> Result<Self> {
        key.chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(Error::Validation(format!("invalid model bit '{other}'"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn active(&self) -> Vec<usize> {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j).collect()
    }

    pub fn size(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// Beta-binomial prior on the number of active free features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaBinomial {
    pub a: f64,
    pub b: f64,
}

impl Default for BetaBinomial {
    fn default() -> Self {
        Self { a: 1.0, b: 1.0 }
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

impl BetaBinomial {
    /// Log prior of one model; features listed in `forced` are not counted.
    pub fn log_prob(&self, model: &ModelIndicator, forced: &[usize]) -> f64 {
        let q = model.0.len() - forced.len();
        let k = model.active().iter().filter(|j| !forced.contains(j)).count();
        ln_beta(k as f64 + self.a, (q - k) as f64 + self.b) - ln_beta(self.a, self.b)
    }

    /// Probability of `k` active features out of `q`, summed over models.
    pub fn size_pmf(&self, k: usize, q: usize) -> f64 {
        let ln_choose = libm::lgamma(q as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((q - k) as f64 + 1.0);
        (ln_choose + ln_beta(k as f64 + self.a, (q - k) as f64 + self.b) - ln_beta(self.a, self.b)).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RjConfig {
    /// Total iterations, burn-in included.
    pub n_iter: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub min_visits: u64,
    /// Features present in every model, such as an intercept.
    pub always_active: Vec<usize>,
    pub model_prior: BetaBinomial,
}

impl RjConfig {
    pub fn new(n_iter: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            n_iter,
            burn_in,
            seed,
            min_visits: DEFAULT_MIN_VISITS,
            always_active: Vec::new(),
            model_prior: BetaBinomial::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RjModelSummary {
    pub visits: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_row_major: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RJOutput {
    pub shard_id: usize,
    pub n_splits: usize,
    pub n_features: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub min_visits: u64,
    pub always_active: Vec<usize>,
    pub model_prior: BetaBinomial,
    /// Keyed by [`ModelIndicator::key`].
    pub models: BTreeMap<String, RjModelSummary>,
}

impl RJOutput {
    pub fn retained(&self) -> u64 {
        (self.n_iter - self.burn_in) as u64
    }

    pub fn visits(&self, m: &ModelIndicator) -> u64 {
        self.models.get(&m.key()).map_or(0, |s| s.visits)
    }

    fn require(&self, m: &ModelIndicator) -> Result<&RjModelSummary> {
        let visits = self.visits(m);
        if visits < self.min_visits {
            return Err(Error::UnexploredModel {
                model: m.key(),
                shard: self.shard_id,
                visits,
                required: self.min_visits,
            });
        }
        Ok(&self.models[&m.key()])
    }

    pub fn moments(&self, m: &ModelIndicator) -> Result<GaussianMoments> {
        let s = self.require(m)?;
        match (&s.mean, &s.cov_row_major) {
            (Some(mean), Some(cov)) => GaussianMoments::from_slices(mean, cov),
            _ => Err(Error::UnexploredModel {
                model: m.key(),
                shard: self.shard_id,
                visits: s.visits,
                required: self.min_visits,
            }),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("RJ output serialises");
        s.push('\n');
        s
    }
}

struct Accumulator {
    visits: u64,
    shift: Vec<f64>,
    sum: Vec<f64>,
    outer: Vec<f64>,
}

impl Accumulator {
    fn new(first: &[f64]) -> Self {
        let d = first.len();
        Self {
            visits: 0,
            shift: first.to_vec(),
            sum: vec![0.0; d],
            outer: vec![0.0; d * d],
        }
    }

    fn push(&mut self, theta: &[f64]) {
        let d = theta.len();
        self.visits += 1;
        for a in 0..d {
            let da = theta[a] - self.shift[a];
            self.sum[a] += da;
            for b in 0..d {
                self.outer[a * d + b] += da * (theta[b] - self.shift[b]);
            }
        }
    }

    fn summary(&self, min_visits: u64) -> RjModelSummary {
        let d = self.shift.len();
        let mut out = RjModelSummary {
            visits: self.visits,
            mean: None,
            cov_row_major: None,
        };
        if self.visits < min_visits.max(2) || d == 0 {
            return out;
        }
        let n = self.visits as f64;
        let mean_shifted: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let mut cov = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] = (self.outer[a * d + b] - n * mean_shifted[a] * mean_shifted[b]) / (n - 1.0);
            }
        }
        for a in 0..d {
            for b in 0..a {
                let v = 0.5 * (cov[a * d + b] + cov[b * d + a]);
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
        }
        if GaussianMoments::from_slices(&mean_shifted, &cov).is_ok() {
            out.mean = Some(mean_shifted.iter().zip(&self.shift).map(|(m, s)| m + s).collect());
            out.cov_row_major = Some(cov);
        }
        out
    }
}

/// Model with the coefficient prior marginalised to `active`.
pub fn submodel(base: &ModelSpec, active: &[usize]) -> Result<ModelSpec> {
    let prior = match &base.prior {
        Prior::Normal { mean, cov } => Prior::Normal {
            mean: active.iter().map(|&j| mean[j]).collect(),
            cov: active.iter().map(|&a| active.iter().map(|&b| cov[a][b]).collect()).collect(),
        },
        Prior::Laplace { scale } => Prior::Laplace { scale: *scale },
    };
    let mut id = base.model_id.clone();
    id.push(':');
    id.push_str(&ModelIndicator::from_active(base.dim, active)?.key());
    let m = ModelSpec::new(id, base.likelihood.clone(), prior, active.len()).with_active_features(active.to_vec());
    m.validate()?;
    Ok(m)
}

/// Log density of the subprior restricted to one model.
enum SubpriorBlock {
    Normal { mean: Vector, chol: Cholesky<f64, nalgebra::Dyn>, log_det: f64 },
    Laplace { scale: f64 },
    Empty,
}

impl SubpriorBlock {
    fn new(base: &ModelSpec, active: &[usize], splits: usize) -> Result<Self> {
        if active.is_empty() {
            return Ok(SubpriorBlock::Empty);
        }
        let s = splits as f64;
        Ok(match &base.prior {
            Prior::Normal { mean, cov } => {
                let d = active.len();
                let m = Matrix::from_fn(d, d, |a, b| cov[active[a]][active[b]] * s);
                let chol = linalg::cholesky(&m, "model subprior covariance")?;
                SubpriorBlock::Normal {
                    mean: Vector::from_iterator(d, active.iter().map(|&j| mean[j])),
                    log_det: linalg::chol_log_det(&chol),
                    chol,
                }
            }
            Prior::Laplace { scale } => SubpriorBlock::Laplace { scale: scale * s },
        })
    }

    fn log_density(&self, coef: &[f64]) -> f64 {
        match self {
            SubpriorBlock::Empty => 0.0,
            SubpriorBlock::Normal { mean, chol, log_det } => {
                let d = mean.len();
                let diff = Vector::from_column_slice(coef) - mean;
                -0.5 * (d as f64 * ln_2pi() + log_det + linalg::chol_quad_inv(chol, &diff))
            }
            SubpriorBlock::Laplace { scale } => coef
                .iter()
                .map(|c| -(2.0 * scale).ln() - c.abs() / scale)
                .sum(),
        }
    }
}

/// Marginal subprior of one coefficient, used to propose births.
fn draw_entering(base: &ModelSpec, j: usize, splits: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let s = splits as f64;
    match &base.prior {
        Prior::Normal { mean, cov } => {
            let var = cov[j][j] * s;
            let z: f64 = StandardNormal.sample(rng);
            let u = mean[j] + var.sqrt() * z;
            (u, -0.5 * (ln_2pi() + var.ln() + z * z))
        }
        Prior::Laplace { scale } => {
            let b = scale * s;
            let e: f64 = -rng.random::<f64>().ln();
            let u = if rng.random::<bool>() { e * b } else { -e * b };
            (u, -(2.0 * b).ln() - u.abs() / b)
        }
    }
}

fn entering_log_density(base: &ModelSpec, j: usize, splits: usize, u: f64) -> f64 {
    let s = splits as f64;
    match &base.prior {
        Prior::Normal { mean, cov } => {
            let var = cov[j][j] * s;
            -0.5 * (ln_2pi() + var.ln() + (u - mean[j]).powi(2) / var)
        }
        Prior::Laplace { scale } => {
            let b = scale * s;
            -(2.0 * b).ln() - u.abs() / b
        }
    }
}

struct ModelCache {
    block: SubpriorBlock,
    /// Lower factor of the within-model proposal shape.
    factor: Matrix,
    log_scale: f64,
    moves: u64,
}

/// Runs the reversible-jump sampler on one shard; `base` lists every
/// candidate feature and its prior.
pub fn rjmcmc_sample(shard: &Shard, base: &ModelSpec, splits: usize, config: &RjConfig) -> Result<RJOutput> {
    let p = base.dim;
    if p == 0 || p > MAX_FEATURES {
        return Err(Error::Config(format!("reversible jump supports 1 to {MAX_FEATURES} features, got {p}")));
    }
    if base.active_features.is_some() {
        return Err(Error::Config("the base model must include every candidate feature".into()));
    }
    if matches!(base.likelihood, Likelihood::LinearGaussianLognormalVar { .. }) {
        return Err(Error::Config("reversible jump needs a logistic or known-variance linear likelihood".into()));
    }
    if config.n_iter <= config.burn_in {
        return Err(Error::Config(format!(
            "iterations ({}) must exceed burn-in ({})",
            config.n_iter, config.burn_in
        )));
    }
    if config.always_active.iter().any(|&j| j >= p) {
        return Err(Error::Config("always-active feature out of range".into()));
    }
    let free: Vec<usize> = (0..p).filter(|j| !config.always_active.contains(j)).collect();
    if free.is_empty() {
        return Err(Error::Config("no free features to select".into()));
    }
    let full = Subposterior::new(base, &shard.data, splits)?;
    let design: &Design = &full.design;
    let mode = find_mode(&full, &initial_point_for(&full)).map_err(|e| e.in_shard(shard.shard_id))?;
    let full_prec = mode.precision.clone();

    let mut rng = rng_from_seed(config.seed);
    let mut gamma = ModelIndicator::from_active(p, &(0..p).collect::<Vec<_>>())?;
    let mut theta: Vec<f64> = mode.theta.clone();
    let mut active = gamma.active();
    let mut log_lik = design.log_likelihood_subset(&active, &theta);
    let mut caches: HashMap<ModelIndicator, ModelCache> = HashMap::new();
    let mut acc: BTreeMap<ModelIndicator, Accumulator> = BTreeMap::new();
    let rm_target = 0.234;

    let cache_for = |g: &ModelIndicator, caches: &mut HashMap<ModelIndicator, ModelCache>| -> Result<()> {
        if caches.contains_key(g) {
            return Ok(());
        }
        let act = g.active();
        let d = act.len();
        let block = SubpriorBlock::new(base, &act, splits)?;
        let factor = if d == 0 {
            Matrix::zeros(0, 0)
        } else {
            let sub_prec = Matrix::from_fn(d, d, |a, b| full_prec[(act[a], act[b])]);
            let chol = Cholesky::new(sub_prec).ok_or_else(|| {
                Error::NotPositiveDefinite {
                    context: "within-model proposal precision".into(),
                    min_eigenvalue: f64::NAN,
                }
            })?;
            let cov = chol.inverse() * (2.38 * 2.38 / d as f64);
            Cholesky::new(cov).map(|c| c.l()).unwrap_or_else(|| Matrix::identity(d, d) * 1e-3)
        };
        caches.insert(
            g.clone(),
            ModelCache {
                block,
                factor,
                log_scale: 0.0,
                moves: 0,
            },
        );
        Ok(())
    };

    cache_for(&gamma, &mut caches)?;
    let mut log_sub = caches[&gamma].block.log_density(&theta);
    let mut proposal = Vec::with_capacity(p);

    for it in 0..config.n_iter {
        let burning = it < config.burn_in;
        // within-model random walk
        let d = active.len();
        if d > 0 {
            let cache = caches.get_mut(&gamma).expect("cached model");
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let scale = cache.log_scale.exp();
            proposal.clear();
            for a in 0..d {
                let mut step = 0.0;
                for b in 0..=a {
                    step += cache.factor[(a, b)] * z[b];
                }
                proposal.push(theta[a] + scale * step);
            }
            let ll = design.log_likelihood_subset(&active, &proposal);
            let ls = cache.block.log_density(&proposal);
            let log_r = ll + ls - log_lik - log_sub;
            let accepted = ll.is_finite() && rng.random::<f64>().ln() < log_r;
            if accepted {
                theta.clone_from(&proposal);
                log_lik = ll;
                log_sub = ls;
            }
            if burning {
                cache.moves += 1;
                let a = if log_r.is_finite() { log_r.min(0.0).exp() } else { 0.0 };
                cache.log_scale += (a - rm_target) / (cache.moves as f64).powf(0.6);
                cache.log_scale = cache.log_scale.clamp(-10.0, 3.0);
            }
        }

        // birth or death of one free feature
        let j = free[rng.random_range(0..free.len())];
        let mut new_gamma = gamma.clone();
        new_gamma.0[j] = !gamma.0[j];
        cache_for(&new_gamma, &mut caches)?;
        let new_active = new_gamma.active();
        let pos = new_active.iter().position(|&k| k == j);
        let (new_theta, log_q) = if new_gamma.0[j] {
            let (u, lq) = draw_entering(base, j, splits, &mut rng);
            let pos = pos.expect("entering feature is active");
            let mut t = theta.clone();
            t.insert(pos, u);
            (t, -lq)
        } else {
            let old_pos = active.iter().position(|&k| k == j).expect("leaving feature is active");
            let mut t = theta.clone();
            let u = t.remove(old_pos);
            (t, entering_log_density(base, j, splits, u))
        };
        let ll = design.log_likelihood_subset(&new_active, &new_theta);
        let ls = caches[&new_gamma].block.log_density(&new_theta);
        let log_r = ll + ls - log_lik - log_sub + config.model_prior.log_prob(&new_gamma, &config.always_active)
            - config.model_prior.log_prob(&gamma, &config.always_active)
            + log_q;
        if ll.is_finite() && rng.random::<f64>().ln() < log_r {
            gamma = new_gamma;
            active = new_active;
            theta = new_theta;
            log_lik = ll;
            log_sub = ls;
        }

        if !burning {
            acc.entry(gamma.clone())
                .or_insert_with(|| Accumulator::new(&theta))
                .push(&theta);
        }
    }

    Ok(RJOutput {
        shard_id: shard.shard_id,
        n_splits: splits,
        n_features: p,
        n_iter: config.n_iter,
        burn_in: config.burn_in,
        seed: config.seed,
        min_visits: config.min_visits,
        always_active: config.always_active.clone(),
        model_prior: config.model_prior,
        models: acc.iter().map(|(g, a)| (g.key(), a.summary(config.min_visits))).collect(),
    })
}

/// `log(visits(m1) / visits(m2))` on one shard.
pub fn model_posterior_odds(out: &RJOutput, m1: &ModelIndicator, m2: &ModelIndicator) -> Result<f64> {
    let a = out.require(m1)?.visits as f64;
    let b = out.require(m2)?.visits as f64;
    Ok(a.ln() - b.ln())
}

/// Posterior odds divided by prior odds on one shard.
pub fn prior_corrected_log_bf(out: &RJOutput, m1: &ModelIndicator, m2: &ModelIndicator) -> Result<f64> {
    let odds = model_posterior_odds(out, m1, m2)?;
    let prior = out.model_prior;
    Ok(odds + prior.log_prob(m2, &out.always_active) - prior.log_prob(m1, &out.always_active))
}

/// `log p(y | m1) − log p(y | m2)` from per-shard reversible-jump runs.
pub fn distributed_log_bf(outputs: &[RJOutput], base: &ModelSpec, m1: &ModelIndicator, m2: &ModelIndicator) -> Result<f64> {
    let splits = outputs.len();
    if splits == 0 {
        return Err(Error::Combination("no reversible-jump outputs".into()));
    }
    let mut total = 0.0;
    for out in outputs {
        if out.n_splits != splits {
            return Err(Error::Combination(format!(
                "shard {} was sampled for S = {} but {splits} outputs were given",
                out.shard_id, out.n_splits
            )));
        }
        total += prior_corrected_log_bf(out, m1, m2)?;
    }
    let sub1 = submodel(base, &m1.active())?;
    let sub2 = submodel(base, &m2.active())?;
    total += splits as f64 * (log_alpha(&sub1, splits)? - log_alpha(&sub2, splits)?);
    let parts = |m: &ModelIndicator| outputs.iter().map(|o| o.moments(m)).collect::<Result<Vec<_>>>();
    total += log_gaussian_product_integral(&parts(m1)?)? - log_gaussian_product_integral(&parts(m2)?)?;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{exact_evidence_conjugate_gaussian, linear_data};
    use crate::model::Dataset;

    fn flat_data(n: usize, p: usize) -> Dataset {
        Dataset::new(vec![0.0; n * p], (0..n).map(|i| (i % 2) as f64).collect(), p).unwrap()
    }

    #[test]
    fn indicator_keys() {
        let m = ModelIndicator::from_active(5, &[0, 1, 4]).unwrap();
        assert_eq!(m.key(), "11001");
        assert_eq!(ModelIndicator::from_key("11001").unwrap(), m);
        assert_eq!(m.active(), vec![0, 1, 4]);
        assert!(ModelIndicator::from_key("12").is_err());
    }

    #[test]
    fn beta_binomial_uniform_sizes() {
        let prior = BetaBinomial::default();
        let total: f64 = (0..=4).map(|k| prior.size_pmf(k, 4)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for k in 0..=4 {
            assert!((prior.size_pmf(k, 4) - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_likelihood_recovers_model_prior() {
        let data = flat_data(30, 4);
        let base = ModelSpec::new("lg", Likelihood::Logistic, Prior::isotropic_normal(4, 1.0), 4);
        let n_iter = 60_000;
        let out = rjmcmc_sample(&Shard::whole(&data), &base, 1, &RjConfig::new(n_iter, 5_000, 3)).unwrap();
        let total: u64 = out.models.values().map(|s| s.visits).sum();
        assert_eq!(total, out.retained());
        let mut by_size = [0u64; 5];
        for (k, s) in &out.models {
            by_size[ModelIndicator::from_key(k).unwrap().size()] += s.visits;
        }
        // chi-square against the uniform size distribution, 4 degrees of
        // freedom; the chain is autocorrelated so use a loose bound
        let n = total as f64;
        let chi2: f64 = by_size.iter().map(|&c| (c as f64 - 0.2 * n).powi(2) / (0.2 * n)).sum();
        assert!(chi2 / n < 0.01, "sizes {by_size:?}");
    }

    #[test]
    fn odds_examples() {
        let mut out = RJOutput {
            shard_id: 0,
            n_splits: 1,
            n_features: 2,
            n_iter: 1000,
            burn_in: 0,
            seed: 0,
            min_visits: 100,
            always_active: vec![],
            model_prior: BetaBinomial::default(),
            models: BTreeMap::new(),
        };
        let m1 = ModelIndicator::from_key("10").unwrap();
        let m2 = ModelIndicator::from_key("01").unwrap();
        let summary = |v| RjModelSummary {
            visits: v,
            mean: None,
            cov_row_major: None,
        };
        out.models.insert("10".into(), summary(500));
        out.models.insert("01".into(), summary(500));
        assert_eq!(model_posterior_odds(&out, &m1, &m2).unwrap(), 0.0);
        out.models.insert("10".into(), summary(800));
        out.models.insert("01".into(), summary(200));
        assert!((model_posterior_odds(&out, &m1, &m2).unwrap() - 1.386294).abs() < 1e-6);
        let m3 = ModelIndicator::from_key("11").unwrap();
        assert!(matches!(
            model_posterior_odds(&out, &m1, &m3),
            Err(Error::UnexploredModel { visits: 0, .. })
        ));
    }

    #[test]
    fn conjugate_sojourn_odds_match_exact_evidence() {
        let data = linear_data(60, &[0.35, 0.2], 1.0, 0.3, 11).unwrap();
        let base = ModelSpec::new(
            "lin",
            Likelihood::LinearGaussianKnownVar { noise_var: 1.0 },
            Prior::isotropic_normal(2, 1.0),
            2,
        );
        let out = rjmcmc_sample(&Shard::whole(&data), &base, 1, &RjConfig::new(400_000, 10_000, 5)).unwrap();
        let models = ["00", "10", "01", "11"].map(|k| ModelIndicator::from_key(k).unwrap());
        let exact: Vec<f64> = models
            .iter()
            .map(|m| {
                let act = m.active();
                let d = data.columns(&act);
                if act.is_empty() {
                    // y ~ N(0, I)
                    data.y.iter().map(|y| -0.5 * (ln_2pi() + y * y)).sum()
                } else {
                    exact_evidence_conjugate_gaussian(&d, &vec![0.0; act.len()], &Matrix::identity(act.len(), act.len()), 1.0)
                        .unwrap()
                }
            })
            .collect();
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                let est = prior_corrected_log_bf(&out, &models[i], &models[j]).unwrap();
                let truth = exact[i] - exact[j];
                assert!((est - truth).abs() < 0.3, "{} vs {}: {est} vs {truth}", models[i].key(), models[j].key());
            }
        }
        let single = distributed_log_bf(std::slice::from_ref(&out), &base, &models[3], &models[1]).unwrap();
        assert_eq!(single, prior_corrected_log_bf(&out, &models[3], &models[1]).unwrap());
    }

    #[test]
    fn deterministic_given_seed() {
        let data = linear_data(40, &[0.5, -0.3, 0.0], 1.0, 0.2, 2).unwrap();
        let base = ModelSpec::new(
            "lin",
            Likelihood::LinearGaussianKnownVar { noise_var: 1.0 },
            Prior::isotropic_normal(3, 1.0),
            3,
        );
        let cfg = RjConfig::new(5_000, 500, 9);
        let a = rjmcmc_sample(&Shard::whole(&data), &base, 2, &cfg).unwrap();
        let b = rjmcmc_sample(&Shard::whole(&data), &base, 2, &cfg).unwrap();
        assert_eq!(a, b);
        let back: RJOutput = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(back, a);
    }
}
