//! Oracles, error metrics and synthetic data.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::evidence::consensus_moments;
use crate::linalg::{self, ln_2pi, log_abs_diff_exp, log_sum_exp, Matrix, Vector};
use crate::model::{sigmoid, Dataset, Likelihood, ModelSpec, Prior, PriorEval, Shard, Subposterior};
use crate::samplers::{find_mode, rng_from_seed, GaussianMoments};
use crate::{Error, Result};

/// `log N(y | X m0, σ² I + X V0 X')` through the `p`-dimensional identities
/// (matrix determinant lemma and Woodbury).
pub fn exact_evidence_conjugate_gaussian(data: &Dataset, m0: &[f64], v0: &Matrix, noise_var: f64) -> Result<f64> {
    let p = data.p;
    if m0.len() != p || v0.nrows() != p || v0.ncols() != p {
        return Err(Error::Dimension(format!("prior of order {} for {p} features", m0.len())));
    }
    if !(noise_var > 0.0) {
        return Err(Error::Domain(format!("noise variance must be positive, got {noise_var}")));
    }
    let n = data.n as f64;
    let mut gram = Matrix::zeros(p, p);
    let mut xtr = Vector::zeros(p);
    let mut rtr = 0.0;
    for i in 0..data.n {
        let row = data.row(i);
        let fit: f64 = row.iter().zip(m0).map(|(a, b)| a * b).sum();
        let r = data.y[i] - fit;
        rtr += r * r;
        for a in 0..p {
            xtr[a] += row[a] * r;
            for b in 0..p {
                gram[(a, b)] += row[a] * row[b];
            }
        }
    }
    let v0_chol = linalg::cholesky(v0, "prior covariance")?;
    let mut inner = v0_chol.inverse() + &gram / noise_var;
    linalg::symmetrize(&mut inner);
    let inner_chol = linalg::cholesky(&inner, "marginal covariance")?;
    let log_det = n * noise_var.ln() + linalg::chol_log_det(&v0_chol) + linalg::chol_log_det(&inner_chol);
    let u = &xtr / noise_var;
    let quad = rtr / noise_var - linalg::chol_quad_inv(&inner_chol, &u);
    Ok(-0.5 * (n * ln_2pi() + log_det + quad))
}

/// Exact subposterior of a conjugate linear model on one shard with its local
/// evidence `log p̃(y_s)`.
pub fn conjugate_subposterior(model: &ModelSpec, data: &Dataset, splits: usize) -> Result<(GaussianMoments, f64)> {
    let noise_var = match model.likelihood {
        Likelihood::LinearGaussianKnownVar { noise_var } => noise_var,
        _ => {
            return Err(Error::Config(format!(
                "model {}: analytic moments need a linear model with known variance",
                model.model_id
            )))
        }
    };
    let (m0, v0) = match &model.prior {
        Prior::Normal { mean, .. } => (mean.clone(), model.prior.cov_matrix().expect("normal prior")),
        Prior::Laplace { .. } => {
            return Err(Error::Config(format!("model {}: analytic moments need a normal prior", model.model_id)))
        }
    };
    if splits == 0 {
        return Err(Error::Domain("number of splits must be at least 1".into()));
    }
    model.validate_for(data)?;
    let cols = model.columns(data.p);
    let reduced = data.columns(&cols);
    let sv0 = &v0 * splits as f64;
    let local = exact_evidence_conjugate_gaussian(&reduced, &m0, &sv0, noise_var)?;

    let sub = Subposterior::new(model, data, splits)?;
    let (PriorEval::Normal { prec, .. }, crate::model::Design::Linear { gram, xty, .. }) = (&sub.prior, &sub.design)
    else {
        unreachable!()
    };
    let s = splits as f64;
    let precision = gram / noise_var + prec / s;
    let rhs = xty / noise_var + prec * Vector::from_column_slice(&m0) / s;
    let chol = linalg::cholesky(&precision, "conjugate posterior precision")?;
    let mut cov = chol.inverse();
    linalg::symmetrize(&mut cov);
    Ok((GaussianMoments::new(chol.solve(&rhs), cov)?, local))
}

pub const QUADRATURE_TOL: f64 = 1e-6;
const BOX_HALF_WIDTH: f64 = 10.0;

/// `log Σ w_ij exp f(θ_ij)·h` on a tensor trapezoid grid over a box.
fn log_trapezoid(f: &dyn Fn(&[f64]) -> f64, lo: &[f64], hi: &[f64], m: usize) -> f64 {
    let d = lo.len();
    let h: Vec<f64> = (0..d).map(|j| (hi[j] - lo[j]) / m as f64).collect();
    let log_vol: f64 = h.iter().map(|v| v.ln()).sum();
    let pts = m + 1;
    let total = pts.pow(d as u32);
    let mut vals = Vec::with_capacity(total);
    let mut theta = vec![0.0; d];
    for idx in 0..total {
        let mut k = idx;
        let mut log_w = 0.0;
        for j in 0..d {
            let i = k % pts;
            k /= pts;
            theta[j] = lo[j] + i as f64 * h[j];
            if i == 0 || i == m {
                log_w += 0.5f64.ln();
            }
        }
        vals.push(f(&theta) + log_w);
    }
    log_sum_exp(&vals) + log_vol
}

/// Integrates `exp f` over `center ± 10·sd`, doubling the grid until two
/// successive levels agree to `tol`.
fn adaptive_log_integral(f: &dyn Fn(&[f64]) -> f64, center: &[f64], sd: &[f64], tol: f64) -> Result<f64> {
    let d = center.len();
    if d == 0 || d > 2 {
        return Err(Error::Config(format!("quadrature oracles support 1 or 2 dimensions, got {d}")));
    }
    let lo: Vec<f64> = center.iter().zip(sd).map(|(c, s)| c - BOX_HALF_WIDTH * s).collect();
    let hi: Vec<f64> = center.iter().zip(sd).map(|(c, s)| c + BOX_HALF_WIDTH * s).collect();
    let max_m = if d == 1 { 1 << 16 } else { 1 << 10 };
    let mut m = 32;
    let mut prev = log_trapezoid(f, &lo, &hi, m);
    loop {
        m *= 2;
        let cur = log_trapezoid(f, &lo, &hi, m);
        let achieved = (cur - prev).abs();
        if achieved < tol {
            return Ok(cur);
        }
        if m >= max_m {
            return Err(Error::Quadrature { achieved, target: tol });
        }
        prev = cur;
    }
}

fn laplace_box(sub: &Subposterior) -> Result<(Vec<f64>, Vec<f64>, GaussianMoments)> {
    let init = crate::samplers::initial_point_for(sub);
    let mode = find_mode(sub, &init)?;
    let cov = mode.covariance();
    let sd: Vec<f64> = (0..cov.nrows()).map(|i| cov[(i, i)].sqrt()).collect();
    let gm = GaussianMoments::new(Vector::from_column_slice(&mode.theta), cov)?;
    Ok((mode.theta, sd, gm))
}

/// `log ∫ p(y_s | θ) p̃(θ) dθ` by quadrature, for at most two parameters.
pub fn quadrature_log_evidence(sub: &Subposterior) -> Result<f64> {
    let (center, sd, _) = laplace_box(sub)?;
    adaptive_log_integral(&|t| sub.log_density(t), &center, &sd, QUADRATURE_TOL * 0.1)
}

/// `log ∫ Π_s p̃(θ | y_s) dθ` by quadrature, normalising every subposterior
/// by its own quadrature first.
pub fn quadrature_isub_oracle(model: &ModelSpec, shards: &[Shard], splits: usize) -> Result<f64> {
    if shards.is_empty() {
        return Err(Error::Domain("no shards".into()));
    }
    let subs = shards
        .iter()
        .map(|s| Subposterior::new(model, &s.data, splits))
        .collect::<Result<Vec<_>>>()?;
    if subs[0].dim() > 2 {
        return Err(Error::Config(format!(
            "quadrature oracle supports at most 2 parameters, model {} has {}",
            model.model_id,
            subs[0].dim()
        )));
    }
    let mut log_z = Vec::with_capacity(subs.len());
    let mut approx = Vec::with_capacity(subs.len());
    for (s, sub) in subs.iter().enumerate() {
        let (center, sd, gm) = laplace_box(sub).map_err(|e| e.in_shard(s))?;
        log_z.push(adaptive_log_integral(&|t| sub.log_density(t), &center, &sd, QUADRATURE_TOL * 0.1).map_err(|e| e.in_shard(s))?);
        approx.push(gm);
    }
    let pooled = consensus_moments(&approx)?;
    let center: Vec<f64> = pooled.mean.iter().copied().collect();
    let sd: Vec<f64> = (0..pooled.dim()).map(|i| pooled.cov[(i, i)].sqrt()).collect();
    let log_z_total: f64 = log_z.iter().sum();
    let integrand = |t: &[f64]| subs.iter().map(|s| s.log_density(t)).sum::<f64>() - log_z_total;
    adaptive_log_integral(&integrand, &center, &sd, QUADRATURE_TOL)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpsilonPair {
    pub eps1: f64,
    /// `−∞` when both integrals agree to machine precision.
    pub eps2: f64,
    #[serde(rename = "S")]
    pub splits: usize,
}

pub fn epsilon_metrics(exact_log_isub: f64, approx_log_isub: f64, splits: usize) -> Result<EpsilonPair> {
    if !exact_log_isub.is_finite() || !approx_log_isub.is_finite() {
        return Err(Error::Domain("epsilon metrics need finite log integrals".into()));
    }
    Ok(EpsilonPair {
        eps1: (exact_log_isub - approx_log_isub).abs(),
        eps2: log_abs_diff_exp(exact_log_isub, approx_log_isub),
        splits,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErrorReport {
    #[serde(rename = "S")]
    pub splits: usize,
    pub rmse: f64,
    /// Percent of `|reference|`, signed by the mean bias.
    pub pct_rmse: f64,
    /// `+∞` when the estimates have zero variance but nonzero bias.
    pub bias_sq_over_var: f64,
    pub n_repetitions: usize,
}

pub fn error_table_metrics(estimates: &[f64], reference: f64, splits: usize) -> Result<ErrorReport> {
    let k = estimates.len();
    if k < 2 {
        return Err(Error::Domain(format!("error metrics need at least 2 estimates, got {k}")));
    }
    let kf = k as f64;
    let mean = estimates.iter().sum::<f64>() / kf;
    let mse = estimates.iter().map(|e| (e - reference).powi(2)).sum::<f64>() / kf;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (kf - 1.0);
    let rmse = mse.sqrt();
    let bias = mean - reference;
    let bias_sq = bias * bias;
    let ratio = if var > 0.0 {
        bias_sq / var
    } else if bias_sq == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let pct = if rmse == 0.0 {
        0.0
    } else {
        let sign = if bias < 0.0 { -1.0 } else { 1.0 };
        sign * rmse / reference.abs() * 100.0
    };
    Ok(ErrorReport {
        splits,
        rmse,
        pct_rmse: pct,
        bias_sq_over_var: ratio,
        n_repetitions: k,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    ToyGaussian,
    RjMixture,
    LogisticBasic,
    LinearConjugate,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::ToyGaussian => "toy_gaussian",
            Scenario::RjMixture => "rj_mixture",
            Scenario::LogisticBasic => "logistic_basic",
            Scenario::LinearConjugate => "linear_conjugate",
        }
    }

    pub fn default_n(self) -> usize {
        match self {
            Scenario::ToyGaussian => 10_000,
            Scenario::RjMixture => 4_000,
            Scenario::LogisticBasic => 10_000,
            Scenario::LinearConjugate => 2_000,
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy_gaussian" => Ok(Scenario::ToyGaussian),
            "rj_mixture" => Ok(Scenario::RjMixture),
            "logistic_basic" => Ok(Scenario::LogisticBasic),
            "linear_conjugate" => Ok(Scenario::LinearConjugate),
            other => Err(Error::Config(format!("unknown scenario '{other}'"))),
        }
    }
}

pub const TOY_FEATURES: usize = 17;
pub const TOY_CORRELATION: f64 = 0.9;
pub const RJ_THETA_1: [f64; 5] = [-1.0, 1.0, 0.0, 0.0, 1.0];
pub const RJ_THETA_2: [f64; 5] = [-1.0, 1.0, 0.01, 0.0, 1.0];
/// Active features of the three compared models, zero-based.
pub const RJ_MODELS: [&[usize]; 3] = [&[0, 1, 2, 4], &[0, 3, 4], &[0, 1, 4]];

/// Standard normal features with common pairwise correlation `rho`, from a
/// shared factor: `x_j = √ρ·z_0 + √(1−ρ)·z_j`.
pub fn correlated_features(n: usize, p: usize, rho: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a = rho.sqrt();
    let b = (1.0 - rho).sqrt();
    let mut x = Vec::with_capacity(n * p);
    for _ in 0..n {
        let z0: f64 = StandardNormal.sample(rng);
        for _ in 0..p {
            let z: f64 = StandardNormal.sample(rng);
            x.push(a * z0 + b * z);
        }
    }
    x
}

fn linear_predictor(x: &[f64], p: usize, theta: &[f64]) -> Vec<f64> {
    x.chunks_exact(p)
        .map(|r| r.iter().zip(theta).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn logistic_data(n: usize, theta: &[f64], rho: f64, seed: u64) -> Result<Dataset> {
    let mut rng = rng_from_seed(seed);
    let p = theta.len();
    let x = correlated_features(n, p, rho, &mut rng);
    let y = linear_predictor(&x, p, theta)
        .into_iter()
        .map(|eta| (rng.random::<f64>() < sigmoid(eta)) as u8 as f64)
        .collect();
    Dataset::new(x, y, p)
}

pub fn linear_data(n: usize, theta: &[f64], noise_sd: f64, rho: f64, seed: u64) -> Result<Dataset> {
    let mut rng = rng_from_seed(seed);
    let p = theta.len();
    let x = correlated_features(n, p, rho, &mut rng);
    let y = linear_predictor(&x, p, theta)
        .into_iter()
        .map(|mu| mu + noise_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Dataset::new(x, y, p)
}

/// Deterministic dataset and model suite for a scenario at its default size.
pub fn make_synthetic(scenario: Scenario, seed: u64) -> Result<(Dataset, Vec<ModelSpec>)> {
    make_synthetic_n(scenario, scenario.default_n(), seed)
}

pub fn make_synthetic_n(scenario: Scenario, n: usize, seed: u64) -> Result<(Dataset, Vec<ModelSpec>)> {
    if n == 0 {
        return Err(Error::Config("synthetic datasets need at least one row".into()));
    }
    match scenario {
        Scenario::ToyGaussian => {
            let p = TOY_FEATURES;
            let theta: Vec<f64> = (0..p).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
            let data = linear_data(n, &theta, 1.0, TOY_CORRELATION, seed)?;
            let lik = Likelihood::LinearGaussianLognormalVar {
                log_sigma_mean: 0.0,
                log_sigma_sd: 1.0,
            };
            let mut models = Vec::new();
            for omit in 0..5 {
                let active: Vec<usize> = (0..p).filter(|&j| j != omit).collect();
                models.push(
                    ModelSpec::new(format!("m{}", omit + 1), lik.clone(), Prior::isotropic_normal(p - 1, 1.0), p - 1)
                        .with_active_features(active),
                );
            }
            models.push(ModelSpec::new("m6", lik, Prior::isotropic_normal(p, 1.0), p));
            Ok((data, models))
        }
        Scenario::RjMixture => {
            let half = n / 2;
            let a = logistic_data(half, &RJ_THETA_1, TOY_CORRELATION, seed)?;
            let b = logistic_data(n - half, &RJ_THETA_2, TOY_CORRELATION, seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?;
            let mut x = a.x;
            x.extend(b.x);
            let mut y = a.y;
            y.extend(b.y);
            let data = Dataset::new(x, y, 5)?;
            let mut models = vec![ModelSpec::new("full", Likelihood::Logistic, Prior::isotropic_normal(5, 1.0), 5)];
            for (k, active) in RJ_MODELS.iter().enumerate() {
                models.push(
                    ModelSpec::new(
                        format!("m{}", k + 1),
                        Likelihood::Logistic,
                        Prior::isotropic_normal(active.len(), 1.0),
                        active.len(),
                    )
                    .with_active_features(active.to_vec()),
                );
            }
            Ok((data, models))
        }
        Scenario::LogisticBasic => {
            let theta = [-0.5, 1.0, -1.0, 0.5, 0.0];
            let data = logistic_data(n, &theta, 0.5, seed)?;
            Ok((
                data,
                vec![ModelSpec::new("logistic", Likelihood::Logistic, Prior::isotropic_normal(5, 1.0), 5)],
            ))
        }
        Scenario::LinearConjugate => {
            let theta = [1.0, -0.5, 0.25, 0.0, 2.0];
            let data = linear_data(n, &theta, 1.0, 0.5, seed)?;
            Ok((
                data,
                vec![ModelSpec::new(
                    "linear",
                    Likelihood::LinearGaussianKnownVar { noise_var: 1.0 },
                    Prior::isotropic_normal(5, 1.0),
                    5,
                )],
            ))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub scenario: String,
    pub model_id: String,
    #[serde(rename = "S")]
    pub splits: usize,
    pub repetition: usize,
    pub log_evidence: f64,
    pub method: String,
    pub wall_time_ms: Option<f64>,
}

pub fn write_report_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["scenario", "model_id", "S", "repetition", "log_evidence", "method", "wall_time_ms"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv(path: &Path, reports: &[(String, ErrorReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["label", "S", "rmse", "pct_rmse", "bias_sq_over_var", "n_repetitions"])?;
    for (label, r) in reports {
        w.serialize((label, r.splits, r.rmse, r.pct_rmse, r.bias_sq_over_var, r.n_repetitions))?;
    }
    w.flush()?;
    Ok(())
}
