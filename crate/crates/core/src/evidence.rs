//! Evidence estimators and the recombination of per-shard results.
//!
//! A Gaussian in natural form `(η, Λ)` has log-normaliser
//! `ξ = −½(p·log 2π − log|Λ| + η'Λ⁻¹η)`, and a product of Gaussian densities
//! integrates to `exp(Σ ξ_s − ξ)` where `ξ` belongs to `(Σ η_s, Σ Λ_s)`.

use nalgebra::Cholesky;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{self, ln_2pi, log_mean_exp, log_sum_exp, Matrix, Vector};
use crate::model::{ModelSpec, Shard, Subposterior};
use crate::samplers::{rng_from_seed, Chain, ConditionalGaussianStream, GaussianMoments};
use crate::{Error, Result};

pub const DEFAULT_IMPORTANCE_SAMPLES: usize = 10_000;
pub const DEFAULT_INFLATION: f64 = 1.5;
/// Importance estimates with fewer effective samples are flagged.
pub const LOW_ESS: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceMethod {
    Chib,
    Importance,
    LaplaceMetropolis,
    ExactOracle,
    CombinedApprox,
    CombinedConditional,
}

impl EvidenceMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            EvidenceMethod::Chib => "chib",
            EvidenceMethod::Importance => "importance",
            EvidenceMethod::LaplaceMetropolis => "laplace_metropolis",
            EvidenceMethod::ExactOracle => "exact_oracle",
            EvidenceMethod::CombinedApprox => "combined_approx",
            EvidenceMethod::CombinedConditional => "combined_conditional",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEstimate {
    pub log_value: f64,
    pub mc_std_err: Option<f64>,
    pub method: EvidenceMethod,
    pub n_samples_used: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ess: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub low_ess: bool,
}

impl EvidenceEstimate {
    pub fn new(log_value: f64, method: EvidenceMethod, n_samples_used: usize) -> Self {
        Self {
            log_value,
            mc_std_err: None,
            method,
            n_samples_used,
            ess: None,
            low_ess: false,
        }
    }

    fn with_std_err(mut self, se: f64) -> Self {
        if se.is_finite() {
            self.mc_std_err = Some(se.max(0.0));
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NaturalGaussian {
    pub eta: Vector,
    pub lambda: Matrix,
    pub xi: f64,
}

impl NaturalGaussian {
    pub fn new(eta: Vector, lambda: Matrix) -> Result<Self> {
        if eta.len() != lambda.nrows() || !lambda.is_square() {
            return Err(Error::Dimension("natural parameters disagree in dimension".into()));
        }
        let chol = linalg::cholesky(&lambda, "natural precision")?;
        let xi = log_normalizer(&eta, &chol);
        Ok(Self { eta, lambda, xi })
    }

    pub fn dim(&self) -> usize {
        self.eta.len()
    }

    pub fn to_moments(&self) -> Result<GaussianMoments> {
        let chol = linalg::cholesky(&self.lambda, "natural precision")?;
        let mut cov = chol.inverse();
        linalg::symmetrize(&mut cov);
        let mean = chol.solve(&self.eta);
        GaussianMoments::new(mean, cov)
    }
}

fn log_normalizer(eta: &Vector, chol: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    let p = eta.len() as f64;
    -0.5 * (p * ln_2pi() - linalg::chol_log_det(chol) + linalg::chol_quad_inv(chol, eta))
}

pub fn to_natural(m: &GaussianMoments) -> Result<NaturalGaussian> {
    let chol = linalg::cholesky(&m.cov, "moment covariance")?;
    let mut lambda = chol.inverse();
    linalg::symmetrize(&mut lambda);
    let eta = chol.solve(&m.mean);
    NaturalGaussian::new(eta, lambda)
}

pub fn to_moments(n: &NaturalGaussian) -> Result<GaussianMoments> {
    n.to_moments()
}

fn pooled(parts: &[NaturalGaussian]) -> Result<NaturalGaussian> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Domain("product of an empty list of Gaussians".into()))?;
    let p = first.dim();
    let mut eta = Vector::zeros(p);
    let mut lambda = Matrix::zeros(p, p);
    for part in parts {
        if part.dim() != p {
            return Err(Error::Dimension("Gaussian parts differ in dimension".into()));
        }
        eta += &part.eta;
        lambda += &part.lambda;
    }
    NaturalGaussian::new(eta, lambda)
}

/// `log ∫ Π_s N(θ | η_s, Λ_s) dθ` for parts given in natural form.
pub fn log_natural_product_integral(parts: &[NaturalGaussian]) -> Result<f64> {
    let total = pooled(parts)?;
    if parts.len() == 1 {
        return Ok(0.0);
    }
    Ok(parts.iter().map(|g| g.xi).sum::<f64>() - total.xi)
}

/// `log ∫ Π_s N(θ | μ_s, Σ_s) dθ`.
pub fn log_gaussian_product_integral(parts: &[GaussianMoments]) -> Result<f64> {
    let natural = parts.iter().map(to_natural).collect::<Result<Vec<_>>>()?;
    log_natural_product_integral(&natural)
}

/// Precision-weighted pooling of the parts.
pub fn consensus_moments(parts: &[GaussianMoments]) -> Result<GaussianMoments> {
    let natural = parts.iter().map(to_natural).collect::<Result<Vec<_>>>()?;
    pooled(&natural)?.to_moments()
}

/// Standard error of the mean of a possibly autocorrelated sequence by
/// non-overlapping batch means.
fn batch_mean_std_err(values: &[f64]) -> f64 {
    let n = values.len();
    let b = ((n as f64).sqrt() as usize).max(1);
    let k = n / b;
    if k < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = values[..k * b]
        .chunks_exact(b)
        .map(|c| c.iter().sum::<f64>() / b as f64)
        .collect();
    let m = means.iter().sum::<f64>() / k as f64;
    let var = means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (k - 1) as f64;
    (var * b as f64 / n as f64).sqrt()
}

/// Chib's estimate of the shard evidence evaluated at `theta_star`, with
/// the posterior ordinate averaged over the recorded conditional Gaussians.
pub fn chib_log_evidence(
    stream: &ConditionalGaussianStream,
    model: &ModelSpec,
    shard: &Shard,
    splits: usize,
    theta_star: &[f64],
) -> Result<EvidenceEstimate> {
    let sub = Subposterior::new(model, &shard.data, splits)?;
    let p = stream.dim();
    if theta_star.len() != p || sub.dim() != p {
        return Err(Error::Dimension(format!(
            "Chib anchor has length {} for a stream of dimension {p}",
            theta_star.len()
        )));
    }
    if theta_star.iter().any(|t| !t.is_finite()) {
        return Err(Error::Domain("Chib anchor is not finite".into()));
    }
    let n = stream.len();
    if n == 0 {
        return Err(Error::Estimator("empty conditional stream".into()));
    }
    let eta = stream.eta_vector();
    let theta = Vector::from_column_slice(theta_star);
    let mut ordinates = Vec::with_capacity(n);
    for i in 0..n {
        let lambda = stream.precision(i);
        let chol = linalg::cholesky(&lambda, &format!("shard {} conditional precision {}", shard.shard_id, i + 1))
            .map_err(|e| e.in_shard(shard.shard_id))?;
        let mean = chol.solve(&eta);
        let diff = &theta - mean;
        let quad = diff.dot(&(&lambda * &diff));
        ordinates.push(-0.5 * (p as f64 * ln_2pi() - linalg::chol_log_det(&chol) + quad));
    }
    let log_ordinate = log_mean_exp(&ordinates);
    if !log_ordinate.is_finite() {
        return Err(Error::Estimator(format!(
            "shard {}: posterior ordinate vanishes for every conditional",
            shard.shard_id
        )));
    }
    let scaled: Vec<f64> = ordinates.iter().map(|o| (o - log_ordinate).exp()).collect();
    let se = batch_mean_std_err(&scaled);
    Ok(EvidenceEstimate::new(sub.log_density(theta_star) - log_ordinate, EvidenceMethod::Chib, n).with_std_err(se))
}

/// Chib's estimate anchored at the chain mean.
pub fn chib_log_evidence_at_mean(
    chain: &Chain,
    stream: &ConditionalGaussianStream,
    model: &ModelSpec,
    shard: &Shard,
    splits: usize,
) -> Result<EvidenceEstimate> {
    let n = chain.len();
    if n == 0 {
        return Err(Error::Estimator("empty chain".into()));
    }
    let mut mean = vec![0.0; chain.dim];
    for row in chain.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    chib_log_evidence(stream, model, shard, splits, &mean)
}

/// Importance sampling from `N(μ, c·Σ)`.
pub fn importance_log_evidence(
    model: &ModelSpec,
    shard: &Shard,
    splits: usize,
    proposal: &GaussianMoments,
    draws: usize,
    inflation: f64,
    seed: u64,
) -> Result<EvidenceEstimate> {
    let sub = Subposterior::new(model, &shard.data, splits)?;
    importance_subposterior(&sub, proposal, draws, inflation, seed)
}

pub fn importance_subposterior(
    sub: &Subposterior,
    proposal: &GaussianMoments,
    draws: usize,
    inflation: f64,
    seed: u64,
) -> Result<EvidenceEstimate> {
    let p = sub.dim();
    if proposal.dim() != p {
        return Err(Error::Dimension(format!(
            "proposal has dimension {} for a target of dimension {p}",
            proposal.dim()
        )));
    }
    if draws < 100 {
        return Err(Error::Config(format!("importance sampling needs at least 100 draws, got {draws}")));
    }
    if !(inflation > 0.0 && inflation.is_finite()) {
        return Err(Error::Config(format!("proposal inflation must be positive, got {inflation}")));
    }
    let cov = &proposal.cov * inflation;
    let chol = linalg::cholesky(&cov, "importance proposal covariance")?;
    let l = chol.l();
    let log_det = linalg::chol_log_det(&chol);
    let mut rng = rng_from_seed(seed);
    let mut theta = vec![0.0; p];
    let mut z = Vector::zeros(p);
    let mut log_w = Vec::with_capacity(draws);
    for _ in 0..draws {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let step = &l * &z;
        for j in 0..p {
            theta[j] = proposal.mean[j] + step[j];
        }
        let log_q = -0.5 * (p as f64 * ln_2pi() + log_det + z.norm_squared());
        log_w.push(sub.log_density(&theta) - log_q);
    }
    let lse = log_sum_exp(&log_w);
    if !lse.is_finite() {
        return Err(Error::Estimator("every importance weight vanishes".into()));
    }
    let m = draws as f64;
    let log_value = lse - m.ln();
    // weights scaled so their mean is 1
    let w: Vec<f64> = log_w.iter().map(|lw| (lw - log_value).exp()).collect();
    let sum_sq: f64 = w.iter().map(|x| x * x).sum();
    let ess = m * m / sum_sq;
    let var = w.iter().map(|x| (x - 1.0) * (x - 1.0)).sum::<f64>() / (m - 1.0);
    let mut est = EvidenceEstimate::new(log_value, EvidenceMethod::Importance, draws).with_std_err((var / m).sqrt());
    est.ess = Some(ess);
    est.low_ess = ess < LOW_ESS;
    Ok(est)
}

/// Gaussian approximation of the shard evidence around the sampled moments.
pub fn laplace_metropolis_log_evidence(
    moments: &GaussianMoments,
    model: &ModelSpec,
    shard: &Shard,
    splits: usize,
) -> Result<EvidenceEstimate> {
    let sub = Subposterior::new(model, &shard.data, splits)?;
    laplace_metropolis_subposterior(moments, &sub, 0)
}

pub fn laplace_metropolis_subposterior(
    moments: &GaussianMoments,
    sub: &Subposterior,
    n_samples: usize,
) -> Result<EvidenceEstimate> {
    let p = sub.dim();
    if moments.dim() != p {
        return Err(Error::Dimension(format!(
            "moments have dimension {} for a target of dimension {p}",
            moments.dim()
        )));
    }
    let chol = linalg::cholesky(&moments.cov, "subposterior covariance")?;
    let mu: Vec<f64> = moments.mean.iter().copied().collect();
    let value = 0.5 * p as f64 * ln_2pi() + 0.5 * linalg::chol_log_det(&chol) + sub.log_density(&mu);
    Ok(EvidenceEstimate::new(value, EvidenceMethod::LaplaceMetropolis, n_samples))
}

/// Log of the integral of the product of subposteriors estimated by
/// averaging the closed-form product integrals of paired conditional
/// Gaussians over the first `n` draws.
pub fn conditional_isub(streams: &[ConditionalGaussianStream], n: usize) -> Result<f64> {
    let first = streams
        .first()
        .ok_or_else(|| Error::Domain("no conditional streams".into()))?;
    let p = first.dim();
    for (s, st) in streams.iter().enumerate() {
        if st.dim() != p {
            return Err(Error::Dimension(format!("stream {s} has dimension {} instead of {p}", st.dim())).in_shard(s));
        }
        if st.len() < n {
            return Err(Error::Combination(format!(
                "stream {s} holds {} records but {n} are required",
                st.len()
            )));
        }
    }
    if n == 0 {
        return Err(Error::Domain("conditional estimator needs at least one draw".into()));
    }
    if streams.len() == 1 {
        return Ok(0.0);
    }
    let etas: Vec<Vector> = streams.iter().map(|s| s.eta_vector()).collect();
    let eta_total = etas.iter().fold(Vector::zeros(p), |acc, e| acc + e);
    let mut terms = Vec::with_capacity(n);
    let mut lambda_total = Matrix::zeros(p, p);
    for i in 0..n {
        lambda_total.fill(0.0);
        let mut sum_xi = 0.0;
        for (s, (st, eta)) in streams.iter().zip(&etas).enumerate() {
            let lambda = st.precision(i);
            let chol = linalg::cholesky(&lambda, &format!("shard {s} conditional precision {}", i + 1))
                .map_err(|e| e.in_shard(s))?;
            sum_xi += log_normalizer(eta, &chol);
            lambda_total += &lambda;
        }
        let chol = linalg::cholesky(&lambda_total, &format!("pooled conditional precision {}", i + 1))?;
        terms.push(sum_xi - log_normalizer(&eta_total, &chol));
    }
    Ok(log_mean_exp(&terms))
}

/// `log p(y) = S·log α + Σ_s log p̃(y_s) + log I_sub`.
pub fn combine_evidence(
    log_alpha: f64,
    local: &[EvidenceEstimate],
    log_isub: f64,
    splits: usize,
    method: EvidenceMethod,
) -> Result<EvidenceEstimate> {
    if local.len() != splits {
        let missing = local.len().min(splits);
        return Err(Error::Combination(format!(
            "expected {splits} local evidences, got {} (first missing shard {missing})",
            local.len()
        )));
    }
    let mut total = splits as f64 * log_alpha + log_isub;
    let mut var = 0.0;
    let mut any_err = false;
    let mut n_used = 0;
    for (s, e) in local.iter().enumerate() {
        if !e.log_value.is_finite() {
            return Err(Error::Combination(format!("local evidence of shard {s} is {}", e.log_value)));
        }
        total += e.log_value;
        n_used += e.n_samples_used;
        if let Some(se) = e.mc_std_err {
            var += se * se;
            any_err = true;
        }
    }
    if !total.is_finite() {
        return Err(Error::Combination(format!("combined log evidence is {total}")));
    }
    let mut est = EvidenceEstimate::new(total, method, n_used);
    if any_err {
        est.mc_std_err = Some(var.sqrt());
    }
    est.low_ess = local.iter().any(|e| e.low_ess);
    Ok(est)
}

pub fn log_bayes_factor(e1: &EvidenceEstimate, e2: &EvidenceEstimate) -> f64 {
    e1.log_value - e2.log_value
}

/// Softmax of log evidence plus log prior. Models with `−∞` evidence get 0.
pub fn posterior_model_probs(log_evidences: &[f64], log_prior_probs: &[f64]) -> Result<Vec<f64>> {
    if log_evidences.len() != log_prior_probs.len() {
        return Err(Error::Dimension(format!(
            "{} evidences but {} prior probabilities",
            log_evidences.len(),
            log_prior_probs.len()
        )));
    }
    if log_evidences.is_empty() {
        return Err(Error::Domain("no models to compare".into()));
    }
    let prior_mass = log_sum_exp(log_prior_probs).exp();
    if (prior_mass - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("prior model probabilities sum to {prior_mass}")));
    }
    let scores: Vec<f64> = log_evidences.iter().zip(log_prior_probs).map(|(e, p)| e + p).collect();
    if scores.iter().any(|s| s.is_nan() || *s == f64::INFINITY) {
        return Err(Error::Domain("log evidences must be finite or −∞".into()));
    }
    let norm = log_sum_exp(&scores);
    if !norm.is_finite() {
        return Err(Error::Domain("every model has zero evidence".into()));
    }
    Ok(scores.iter().map(|s| (s - norm).exp()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub model_ids: Vec<String>,
    pub log_evidences: Vec<f64>,
    pub log_prior_probs: Vec<f64>,
    /// `log_bf[i][j] = log p(y | m_i) − log p(y | m_j)`.
    pub log_bf: Vec<Vec<f64>>,
    pub posterior_probs: Vec<f64>,
}

impl ModelComparison {
    /// Uniform model prior when `log_prior_probs` is `None`.
    pub fn new(model_ids: Vec<String>, log_evidences: Vec<f64>, log_prior_probs: Option<Vec<f64>>) -> Result<Self> {
        let k = model_ids.len();
        if log_evidences.len() != k {
            return Err(Error::Dimension(format!("{k} model ids but {} evidences", log_evidences.len())));
        }
        let log_prior_probs = log_prior_probs.unwrap_or_else(|| vec![-(k as f64).ln(); k]);
        let posterior_probs = posterior_model_probs(&log_evidences, &log_prior_probs)?;
        let log_bf = (0..k)
            .map(|i| (0..k).map(|j| log_evidences[i] - log_evidences[j]).collect())
            .collect();
        Ok(Self {
            model_ids,
            log_evidences,
            log_prior_probs,
            log_bf,
            posterior_probs,
        })
    }
}
