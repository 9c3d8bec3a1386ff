//! Models, datasets and shards.
//!
//! Every density the rest of the crate evaluates goes through this module.
//! All densities live in the log domain.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::linalg::{self, ln_2pi, Matrix, Vector};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Likelihood {
    Logistic,
    LinearGaussianKnownVar {
        noise_var: f64,
    },
    /// Linear model whose noise scale is sampled as `log σ ~ N(mean, sd²)`.
    LinearGaussianLognormalVar {
        log_sigma_mean: f64,
        log_sigma_sd: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    Normal { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    /// Independent zero-located Laplace coordinates.
    Laplace { scale: f64 },
}

impl Prior {
    pub fn isotropic_normal(p: usize, var: f64) -> Self {
        let cov = (0..p)
            .map(|i| (0..p).map(|j| if i == j { var } else { 0.0 }).collect())
            .collect();
        Prior::Normal {
            mean: vec![0.0; p],
            cov,
        }
    }

    pub fn cov_matrix(&self) -> Option<Matrix> {
        match self {
            Prior::Normal { cov, .. } => {
                let p = cov.len();
                Some(Matrix::from_fn(p, p, |i, j| cov[i].get(j).copied().unwrap_or(f64::NAN)))
            }
            Prior::Laplace { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    pub likelihood: Likelihood,
    pub prior: Prior,
    /// Number of regression coefficients.
    pub dim: usize,
    /// Dataset columns used by this model, in coefficient order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_features: Option<Vec<usize>>,
}

impl ModelSpec {
    pub fn new(model_id: impl Into<String>, likelihood: Likelihood, prior: Prior, dim: usize) -> Self {
        Self {
            model_id: model_id.into(),
            likelihood,
            prior,
            dim,
            active_features: None,
        }
    }

    pub fn with_active_features(mut self, features: Vec<usize>) -> Self {
        self.active_features = Some(features);
        self
    }

    /// Dimension of the sampled parameter; the log-normal-variance model
    /// appends `log σ` to the coefficients.
    pub fn param_dim(&self) -> usize {
        match self.likelihood {
            Likelihood::LinearGaussianLognormalVar { .. } => self.dim + 1,
            _ => self.dim,
        }
    }

    pub fn is_logistic_normal(&self) -> bool {
        matches!(self.likelihood, Likelihood::Logistic) && matches!(self.prior, Prior::Normal { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config(format!("model {}: dim must be positive", self.model_id)));
        }
        match &self.prior {
            Prior::Normal { mean, cov } => {
                if mean.len() != self.dim || cov.len() != self.dim || cov.iter().any(|r| r.len() != self.dim) {
                    return Err(Error::Dimension(format!(
                        "model {}: prior mean/cov must have order {}",
                        self.model_id, self.dim
                    )));
                }
                let m = self.prior.cov_matrix().expect("normal prior");
                for i in 0..self.dim {
                    for j in 0..i {
                        if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * (1.0 + m[(i, j)].abs()) {
                            return Err(Error::Config(format!(
                                "model {}: prior covariance is not symmetric",
                                self.model_id
                            )));
                        }
                    }
                }
                linalg::cholesky(&m, &format!("model {} prior covariance", self.model_id))?;
            }
            Prior::Laplace { scale } => {
                if !(*scale > 0.0) || !scale.is_finite() {
                    return Err(Error::Config(format!(
                        "model {}: laplace scale must be positive",
                        self.model_id
                    )));
                }
            }
        }
        match self.likelihood {
            Likelihood::Logistic => {}
            Likelihood::LinearGaussianKnownVar { noise_var } => {
                if !(noise_var > 0.0) {
                    return Err(Error::Config(format!("model {}: noise_var must be positive", self.model_id)));
                }
            }
            Likelihood::LinearGaussianLognormalVar { log_sigma_sd, log_sigma_mean } => {
                if !(log_sigma_sd > 0.0) || !log_sigma_mean.is_finite() {
                    return Err(Error::Config(format!(
                        "model {}: log_sigma_sd must be positive",
                        self.model_id
                    )));
                }
            }
        }
        if let Some(active) = &self.active_features {
            if active.len() != self.dim {
                return Err(Error::Dimension(format!(
                    "model {}: {} active features but dim {}",
                    self.model_id,
                    active.len(),
                    self.dim
                )));
            }
            let mut sorted = active.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != active.len() {
                return Err(Error::Config(format!(
                    "model {}: active features must be unique",
                    self.model_id
                )));
            }
        }
        Ok(())
    }

    /// Checks the model against the columns and outcomes of a dataset.
    pub fn validate_for(&self, data: &Dataset) -> Result<()> {
        self.validate()?;
        match &self.active_features {
            Some(active) => {
                if let Some(bad) = active.iter().find(|&&j| j >= data.p) {
                    return Err(Error::Dimension(format!(
                        "model {}: feature {bad} out of range for {} columns",
                        self.model_id, data.p
                    )));
                }
            }
            None => {
                if data.p != self.dim {
                    return Err(Error::Dimension(format!(
                        "model {} has dim {} but data has {} features",
                        self.model_id, self.dim, data.p
                    )));
                }
            }
        }
        if matches!(self.likelihood, Likelihood::Logistic) && data.y.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Input("logistic outcome must be 0/1".into()));
        }
        Ok(())
    }

    pub fn columns(&self, data_p: usize) -> Vec<usize> {
        self.active_features.clone().unwrap_or_else(|| (0..data_p).collect())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let spec: ModelSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Row-major design matrix with outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub p: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, p: usize) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::Input("dataset must contain at least one row".into()));
        }
        if x.len() != n * p {
            return Err(Error::Dimension(format!("{} feature values for {n} rows of {p} columns", x.len())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("dataset contains missing or non-finite values".into()));
        }
        Ok(Self { n, p, x, y })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    /// The same rows restricted to `cols`, in that order.
    pub fn columns(&self, cols: &[usize]) -> Self {
        let mut x = Vec::with_capacity(self.n * cols.len());
        for i in 0..self.n {
            let row = self.row(i);
            x.extend(cols.iter().map(|&j| row[j]));
        }
        Self {
            n: self.n,
            p: cols.len(),
            x,
            y: self.y.clone(),
        }
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut x = Vec::with_capacity(rows.len() * self.p);
        let mut y = Vec::with_capacity(rows.len());
        for &r in rows {
            x.extend_from_slice(self.row(r));
            y.push(self.y[r]);
        }
        Self {
            n: rows.len(),
            p: self.p,
            x,
            y,
        }
    }

    /// Reads a CSV with a header row: an outcome column `y` and feature
    /// columns `x1..xp` (in any column order).
    pub fn from_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let y_col = headers
            .iter()
            .position(|h| h.trim() == "y")
            .ok_or_else(|| Error::Input("missing outcome column `y`".into()))?;
        let mut feature_cols = Vec::new();
        for (i, h) in headers.iter().enumerate() {
            let h = h.trim();
            if i == y_col {
                continue;
            }
            let idx = h
                .strip_prefix('x')
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .ok_or_else(|| Error::Input(format!("unexpected column `{h}`")))?;
            feature_cols.push((idx, i));
        }
        feature_cols.sort_unstable();
        for (k, (idx, _)) in feature_cols.iter().enumerate() {
            if *idx != k + 1 {
                return Err(Error::Input("feature columns must be x1..xp without gaps".into()));
            }
        }
        let p = feature_cols.len();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                let field = record.get(i).unwrap_or("").trim();
                field
                    .parse::<f64>()
                    .map_err(|_| Error::Input(format!("row {}: cannot parse `{field}`", line + 1)))
            };
            y.push(parse(y_col)?);
            for &(_, col) in &feature_cols {
                x.push(parse(col)?);
            }
        }
        Self::new(x, y, p)
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["y".to_string()];
        header.extend((1..=self.p).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for i in 0..self.n {
            let mut rec = vec![fmt_f64(self.y[i])];
            rec.extend(self.row(i).iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt_f64(v: f64) -> String {
    // `{}` on f64 is the shortest representation that round-trips
    format!("{v}")
}

/// One worker's slice of the data. The rows are copied out of the parent so
/// a worker cannot touch another shard.
#[derive(Clone, Debug, PartialEq)]
pub struct Shard {
    pub shard_id: usize,
    /// Row indices into the parent dataset.
    pub rows: Vec<usize>,
    pub data: Dataset,
}

impl Shard {
    pub fn new(parent: &Dataset, shard_id: usize, rows: Vec<usize>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Domain(format!("shard {shard_id} is empty")));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= parent.n) {
            return Err(Error::Dimension(format!("row {bad} out of range")));
        }
        Ok(Self {
            shard_id,
            data: parent.subset(&rows),
            rows,
        })
    }

    /// The whole dataset as a single shard.
    pub fn whole(data: &Dataset) -> Self {
        Self {
            shard_id: 0,
            rows: (0..data.n).collect(),
            data: data.clone(),
        }
    }

    pub fn n_obs(&self) -> usize {
        self.data.n
    }
}

/// Shard data reduced to what a likelihood needs.
#[derive(Clone, Debug)]
pub enum Design {
    Logistic {
        /// Row-major `n × p` restricted to the model columns.
        x: Vec<f64>,
        y: Vec<f64>,
        p: usize,
    },
    /// Sufficient statistics `X'X`, `X'y`, `y'y`.
    Linear {
        gram: Matrix,
        xty: Vector,
        yty: f64,
        n: usize,
        noise: Noise,
    },
}

#[derive(Clone, Copy, Debug)]
pub enum Noise {
    Known(f64),
    LogNormal { mean: f64, sd: f64 },
}

impl Design {
    pub fn new(likelihood: &Likelihood, data: &Dataset, columns: &[usize]) -> Self {
        let p = columns.len();
        match likelihood {
            Likelihood::Logistic => {
                let mut x = Vec::with_capacity(data.n * p);
                for i in 0..data.n {
                    let row = data.row(i);
                    x.extend(columns.iter().map(|&j| row[j]));
                }
                Design::Logistic {
                    x,
                    y: data.y.clone(),
                    p,
                }
            }
            Likelihood::LinearGaussianKnownVar { .. } | Likelihood::LinearGaussianLognormalVar { .. } => {
                let mut gram = Matrix::zeros(p, p);
                let mut xty = Vector::zeros(p);
                let mut yty = 0.0;
                let mut buf = vec![0.0; p];
                for i in 0..data.n {
                    let row = data.row(i);
                    for (b, &j) in buf.iter_mut().zip(columns) {
                        *b = row[j];
                    }
                    let yi = data.y[i];
                    yty += yi * yi;
                    for a in 0..p {
                        xty[a] += buf[a] * yi;
                        for b in 0..=a {
                            gram[(a, b)] += buf[a] * buf[b];
                        }
                    }
                }
                for a in 0..p {
                    for b in 0..a {
                        gram[(b, a)] = gram[(a, b)];
                    }
                }
                let noise = match *likelihood {
                    Likelihood::LinearGaussianKnownVar { noise_var } => Noise::Known(noise_var),
                    Likelihood::LinearGaussianLognormalVar {
                        log_sigma_mean,
                        log_sigma_sd,
                    } => Noise::LogNormal {
                        mean: log_sigma_mean,
                        sd: log_sigma_sd,
                    },
                    Likelihood::Logistic => unreachable!(),
                };
                Design::Linear {
                    gram,
                    xty,
                    yty,
                    n: data.n,
                    noise,
                }
            }
        }
    }

    pub fn n_obs(&self) -> usize {
        match self {
            Design::Logistic { y, .. } => y.len(),
            Design::Linear { n, .. } => *n,
        }
    }

    pub fn n_coef(&self) -> usize {
        match self {
            Design::Logistic { p, .. } => *p,
            Design::Linear { xty, .. } => xty.len(),
        }
    }

    /// Log-likelihood at `params` (coefficients, then `log σ` when sampled).
    pub fn log_likelihood(&self, params: &[f64]) -> f64 {
        match self {
            Design::Logistic { x, y, p } => {
                let mut acc = 0.0;
                for (row, &yi) in x.chunks_exact(*p).zip(y) {
                    let eta: f64 = row.iter().zip(params).map(|(a, b)| a * b).sum();
                    acc += yi * eta - softplus(eta);
                }
                acc
            }
            Design::Linear { n, noise, .. } => {
                let k = self.n_coef();
                let rss = self.rss(&params[..k]);
                let (log_var, var) = match *noise {
                    Noise::Known(v) => (v.ln(), v),
                    Noise::LogNormal { .. } => {
                        let tau = params[k];
                        (2.0 * tau, (2.0 * tau).exp())
                    }
                };
                -0.5 * (*n as f64) * (ln_2pi() + log_var) - 0.5 * rss / var
            }
        }
    }

    fn rss(&self, coef: &[f64]) -> f64 {
        match self {
            Design::Linear { gram, xty, yty, .. } => {
                let k = coef.len();
                let mut quad = 0.0;
                let mut lin = 0.0;
                for a in 0..k {
                    lin += coef[a] * xty[a];
                    let mut row = 0.0;
                    for b in 0..k {
                        row += gram[(a, b)] * coef[b];
                    }
                    quad += coef[a] * row;
                }
                (yty - 2.0 * lin + quad).max(0.0)
            }
            Design::Logistic { .. } => unreachable!("rss is only defined for linear designs"),
        }
    }

    /// Log-likelihood using only the design columns listed in `active`
    /// (indices into this design), with matching coefficients.
    pub fn log_likelihood_subset(&self, active: &[usize], coef: &[f64]) -> f64 {
        match self {
            Design::Logistic { x, y, p } => {
                let mut acc = 0.0;
                for (row, &yi) in x.chunks_exact(*p).zip(y) {
                    let mut eta = 0.0;
                    for (&j, &c) in active.iter().zip(coef) {
                        eta += row[j] * c;
                    }
                    acc += yi * eta - softplus(eta);
                }
                acc
            }
            Design::Linear {
                gram,
                xty,
                yty,
                n,
                noise,
            } => {
                let var = match *noise {
                    Noise::Known(v) => v,
                    Noise::LogNormal { .. } => {
                        panic!("subset likelihood needs a known noise variance")
                    }
                };
                let mut quad = 0.0;
                let mut lin = 0.0;
                for (a, &ja) in active.iter().enumerate() {
                    lin += coef[a] * xty[ja];
                    for (b, &jb) in active.iter().enumerate() {
                        quad += coef[a] * gram[(ja, jb)] * coef[b];
                    }
                }
                let rss = (yty - 2.0 * lin + quad).max(0.0);
                -0.5 * (*n as f64) * (ln_2pi() + var.ln()) - 0.5 * rss / var
            }
        }
    }

    /// Gradient and Hessian of the log-likelihood.
    pub fn grad_hess(&self, params: &[f64]) -> (Vector, Matrix) {
        let d = params.len();
        let mut g = Vector::zeros(d);
        let mut h = Matrix::zeros(d, d);
        match self {
            Design::Logistic { x, y, p } => {
                for (row, &yi) in x.chunks_exact(*p).zip(y) {
                    let eta: f64 = row.iter().zip(params).map(|(a, b)| a * b).sum();
                    let mu = sigmoid(eta);
                    let w = mu * (1.0 - mu);
                    for a in 0..*p {
                        g[a] += (yi - mu) * row[a];
                        for b in 0..=a {
                            h[(a, b)] -= w * row[a] * row[b];
                        }
                    }
                }
            }
            Design::Linear { gram, xty, noise, n, .. } => {
                let k = xty.len();
                let coef = Vector::from_column_slice(&params[..k]);
                let resid_grad = xty - gram * &coef;
                match *noise {
                    Noise::Known(v) => {
                        for a in 0..k {
                            g[a] = resid_grad[a] / v;
                            for b in 0..=a {
                                h[(a, b)] = -gram[(a, b)] / v;
                            }
                        }
                    }
                    Noise::LogNormal { .. } => {
                        let tau = params[k];
                        let var = (2.0 * tau).exp();
                        let rss = self.rss(&params[..k]);
                        for a in 0..k {
                            g[a] = resid_grad[a] / var;
                            for b in 0..=a {
                                h[(a, b)] = -gram[(a, b)] / var;
                            }
                            h[(k, a)] = -2.0 * resid_grad[a] / var;
                        }
                        g[k] = -(*n as f64) + rss / var;
                        h[(k, k)] = -2.0 * rss / var;
                    }
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        (g, h)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Prior evaluation with the factorisations cached.
#[derive(Clone, Debug)]
pub enum PriorEval {
    Normal {
        mean: Vector,
        prec: Matrix,
        log_det_cov: f64,
    },
    Laplace {
        scale: f64,
        p: usize,
    },
}

impl PriorEval {
    pub fn new(prior: &Prior, dim: usize) -> Result<Self> {
        Ok(match prior {
            Prior::Normal { mean, .. } => {
                let cov = prior.cov_matrix().expect("normal prior");
                let chol = linalg::cholesky(&cov, "prior covariance")?;
                PriorEval::Normal {
                    mean: Vector::from_column_slice(mean),
                    log_det_cov: linalg::chol_log_det(&chol),
                    prec: chol.inverse(),
                }
            }
            Prior::Laplace { scale } => PriorEval::Laplace { scale: *scale, p: dim },
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            PriorEval::Normal { mean, .. } => mean.len(),
            PriorEval::Laplace { p, .. } => *p,
        }
    }

    pub fn log_density(&self, coef: &[f64]) -> f64 {
        match self {
            PriorEval::Normal {
                mean,
                prec,
                log_det_cov,
            } => {
                let p = mean.len();
                let mut quad = 0.0;
                for a in 0..p {
                    let da = coef[a] - mean[a];
                    for b in 0..p {
                        quad += da * prec[(a, b)] * (coef[b] - mean[b]);
                    }
                }
                -0.5 * (p as f64 * ln_2pi() + log_det_cov + quad)
            }
            PriorEval::Laplace { scale, p } => {
                let abs: f64 = coef[..*p].iter().map(|c| c.abs()).sum();
                -(*p as f64) * (2.0 * scale).ln() - abs / scale
            }
        }
    }

    pub fn log_alpha(&self, s: usize) -> f64 {
        let sf = s as f64;
        let frac = (sf - 1.0) / sf;
        match self {
            PriorEval::Normal { mean, log_det_cov, .. } => {
                let p = mean.len() as f64;
                0.5 * p * frac * ln_2pi() + 0.5 * frac * log_det_cov + 0.5 * p * sf.ln()
            }
            PriorEval::Laplace { scale, p } => *p as f64 * (frac * (2.0 * scale).ln() + sf.ln()),
        }
    }
}

/// Normal `N(mean, sd²)` on `log σ`.
fn log_sigma_log_density(tau: f64, mean: f64, sd: f64) -> f64 {
    let z = (tau - mean) / sd;
    -0.5 * (ln_2pi() + z * z) - sd.ln()
}

fn log_sigma_log_alpha(s: usize, sd: f64) -> f64 {
    let sf = s as f64;
    let frac = (sf - 1.0) / sf;
    0.5 * frac * ln_2pi() + frac * sd.ln() + 0.5 * sf.ln()
}

/// The normalised subposterior target of one shard:
/// `log p(y_s | θ) + (1/S) log p(θ) − log α`.
#[derive(Clone, Debug)]
pub struct Subposterior {
    pub design: Design,
    pub prior: PriorEval,
    pub splits: usize,
    log_alpha: f64,
    coef_dim: usize,
}

impl Subposterior {
    pub fn new(model: &ModelSpec, data: &Dataset, splits: usize) -> Result<Self> {
        if splits == 0 {
            return Err(Error::Domain("number of splits must be at least 1".into()));
        }
        model.validate_for(data)?;
        let columns = model.columns(data.p);
        let prior = PriorEval::new(&model.prior, model.dim)?;
        Ok(Self {
            design: Design::new(&model.likelihood, data, &columns),
            log_alpha: log_alpha_eval(&prior, &model.likelihood, splits),
            prior,
            splits,
            coef_dim: model.dim,
        })
    }

    pub fn dim(&self) -> usize {
        match self.design {
            Design::Linear {
                noise: Noise::LogNormal { .. },
                ..
            } => self.coef_dim + 1,
            _ => self.coef_dim,
        }
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha
    }

    pub fn log_likelihood(&self, params: &[f64]) -> f64 {
        self.design.log_likelihood(params)
    }

    /// Full (unfragmented) prior over all sampled parameters.
    pub fn log_prior(&self, params: &[f64]) -> f64 {
        let mut lp = self.prior.log_density(&params[..self.coef_dim]);
        if let Design::Linear {
            noise: Noise::LogNormal { mean, sd },
            ..
        } = self.design
        {
            lp += log_sigma_log_density(params[self.coef_dim], mean, sd);
        }
        lp
    }

    /// Normalised subprior `p(θ)^{1/S} / α`.
    pub fn log_subprior(&self, params: &[f64]) -> f64 {
        self.log_prior(params) / self.splits as f64 - self.log_alpha
    }

    pub fn log_density(&self, params: &[f64]) -> f64 {
        self.log_likelihood(params) + self.log_subprior(params)
    }

    /// Gradient and Hessian of [`log_density`](Self::log_density). For a
    /// Laplace prior the prior curvature is zero away from the origin.
    pub fn grad_hess(&self, params: &[f64]) -> (Vector, Matrix) {
        let (mut g, mut h) = self.design.grad_hess(params);
        let inv_s = 1.0 / self.splits as f64;
        let k = self.coef_dim;
        match &self.prior {
            PriorEval::Normal { mean, prec, .. } => {
                for a in 0..k {
                    let mut acc = 0.0;
                    for b in 0..k {
                        acc += prec[(a, b)] * (params[b] - mean[b]);
                        h[(a, b)] -= prec[(a, b)] * inv_s;
                    }
                    g[a] -= acc * inv_s;
                }
            }
            PriorEval::Laplace { scale, .. } => {
                for a in 0..k {
                    let sgn = if params[a] > 0.0 {
                        1.0
                    } else if params[a] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    g[a] -= sgn * inv_s / scale;
                }
            }
        }
        if let Design::Linear {
            noise: Noise::LogNormal { mean, sd },
            ..
        } = self.design
        {
            g[k] -= (params[k] - mean) / (sd * sd) * inv_s;
            h[(k, k)] -= inv_s / (sd * sd);
        }
        (g, h)
    }

    /// A positive definite stand-in for the subprior curvature, used to
    /// regularise Newton steps and initial proposals.
    pub fn subprior_precision(&self) -> Matrix {
        let d = self.dim();
        let inv_s = 1.0 / self.splits as f64;
        let mut m = Matrix::zeros(d, d);
        match &self.prior {
            PriorEval::Normal { prec, .. } => {
                for a in 0..self.coef_dim {
                    for b in 0..self.coef_dim {
                        m[(a, b)] = prec[(a, b)] * inv_s;
                    }
                }
            }
            PriorEval::Laplace { scale, .. } => {
                // reciprocal of the Laplace variance 2(Sb)²
                let sb = scale * self.splits as f64;
                for a in 0..self.coef_dim {
                    m[(a, a)] = 1.0 / (2.0 * sb * sb);
                }
            }
        }
        if let Design::Linear {
            noise: Noise::LogNormal { sd, .. },
            ..
        } = self.design
        {
            m[(self.coef_dim, self.coef_dim)] = inv_s / (sd * sd);
        }
        m
    }
}

fn log_alpha_eval(prior: &PriorEval, likelihood: &Likelihood, splits: usize) -> f64 {
    let mut la = prior.log_alpha(splits);
    if let Likelihood::LinearGaussianLognormalVar { log_sigma_sd, .. } = likelihood {
        la += log_sigma_log_alpha(splits, *log_sigma_sd);
    }
    la
}

fn check_theta(model: &ModelSpec, theta: &[f64]) -> Result<()> {
    if theta.len() != model.param_dim() {
        return Err(Error::Dimension(format!(
            "theta has length {} but model {} samples {} parameters",
            theta.len(),
            model.model_id,
            model.param_dim()
        )));
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Domain("theta must be finite".into()));
    }
    Ok(())
}

/// `Σ_{i ∈ shard} log p(y_i | θ)`.
pub fn log_likelihood(model: &ModelSpec, theta: &[f64], shard: &Shard) -> Result<f64> {
    check_theta(model, theta)?;
    model.validate_for(&shard.data)?;
    let design = Design::new(&model.likelihood, &shard.data, &model.columns(shard.data.p));
    Ok(design.log_likelihood(theta))
}

pub fn log_prior(model: &ModelSpec, theta: &[f64]) -> Result<f64> {
    check_theta(model, theta)?;
    let prior = PriorEval::new(&model.prior, model.dim)?;
    let mut lp = prior.log_density(&theta[..model.dim]);
    if let Likelihood::LinearGaussianLognormalVar {
        log_sigma_mean,
        log_sigma_sd,
    } = model.likelihood
    {
        lp += log_sigma_log_density(theta[model.dim], log_sigma_mean, log_sigma_sd);
    }
    Ok(lp)
}

/// `log ∫ p(θ)^{1/S} dθ` in closed form.
pub fn log_alpha(model: &ModelSpec, splits: usize) -> Result<f64> {
    if splits == 0 {
        return Err(Error::Domain("number of splits must be at least 1".into()));
    }
    let prior = PriorEval::new(&model.prior, model.dim)?;
    Ok(log_alpha_eval(&prior, &model.likelihood, splits))
}

pub fn log_subposterior_unnorm(model: &ModelSpec, theta: &[f64], shard: &Shard, splits: usize) -> Result<f64> {
    check_theta(model, theta)?;
    Ok(Subposterior::new(model, &shard.data, splits)?.log_density(theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_row(x: &[f64], y: f64) -> Shard {
        Shard::whole(&Dataset::new(x.to_vec(), vec![y], x.len()).unwrap())
    }

    fn logistic(p: usize) -> ModelSpec {
        ModelSpec::new("m", Likelihood::Logistic, Prior::isotropic_normal(p, 1.0), p)
    }

    #[test]
    fn logistic_likelihood_examples() {
        let ll = log_likelihood(&logistic(1), &[0.0], &one_row(&[3.7], 1.0)).unwrap();
        assert_abs_diff_eq!(ll, 0.5f64.ln(), epsilon = 1e-12);
        let ll = log_likelihood(&logistic(1), &[1.0], &one_row(&[2.0], 0.0)).unwrap();
        // log(1 - sigmoid(2)) = -log(1 + e^2)
        assert_abs_diff_eq!(ll, -(1.0 + 2f64.exp()).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ll, -2.126928, epsilon = 1e-6);
    }

    #[test]
    fn linear_likelihood_standard_normal_at_zero() {
        let m = ModelSpec::new(
            "m",
            Likelihood::LinearGaussianKnownVar { noise_var: 1.0 },
            Prior::isotropic_normal(1, 1.0),
            1,
        );
        let ll = log_likelihood(&m, &[0.0], &one_row(&[0.0], 0.0)).unwrap();
        assert_abs_diff_eq!(ll, -0.918939, epsilon = 1e-6);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let err = log_likelihood(&logistic(2), &[0.0], &one_row(&[1.0, 2.0], 1.0)).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn prior_examples() {
        assert_abs_diff_eq!(log_prior(&logistic(1), &[0.0]).unwrap(), -0.5 * ln_2pi(), epsilon = 1e-14);
        let lap = ModelSpec::new("l", Likelihood::Logistic, Prior::Laplace { scale: 1.0 }, 1);
        assert_abs_diff_eq!(log_prior(&lap, &[0.0]).unwrap(), 0.5f64.ln(), epsilon = 1e-14);
        let wide = ModelSpec::new("w", Likelihood::Logistic, Prior::isotropic_normal(1, 4.0), 1);
        assert_abs_diff_eq!(log_prior(&wide, &[2.0]).unwrap(), -2.112086, epsilon = 1e-6);
    }

    #[test]
    fn log_alpha_examples() {
        assert_eq!(log_alpha(&logistic(3), 1).unwrap(), 0.0);
        assert_abs_diff_eq!(
            log_alpha(&logistic(1), 2).unwrap(),
            0.25 * ln_2pi() + 0.5 * 2f64.ln(),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(log_alpha(&logistic(1), 2).unwrap(), 0.806045, epsilon = 1e-5);
        let lap = ModelSpec::new("l", Likelihood::Logistic, Prior::Laplace { scale: 1.0 }, 1);
        assert_abs_diff_eq!(log_alpha(&lap, 2).unwrap(), 1.5 * 2f64.ln(), epsilon = 1e-14);
        assert!(matches!(log_alpha(&lap, 0), Err(Error::Domain(_))));
    }

    /// Simpson's rule on a wide interval, independent of the closed form.
    fn quad_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(lo + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn log_alpha_matches_quadrature() {
        for &s in &[1usize, 2, 5, 10] {
            let sf = s as f64;
            let normal = ModelSpec::new("n", Likelihood::Logistic, Prior::isotropic_normal(1, 2.5), 1);
            let q = quad_1d(
                |t: f64| (-0.5 * (ln_2pi() + 2.5f64.ln() + t * t / 2.5) / sf).exp(),
                -40.0 * sf,
                40.0 * sf,
                400_000,
            );
            assert_abs_diff_eq!(log_alpha(&normal, s).unwrap(), q.ln(), epsilon = 1e-8);

            let lap = ModelSpec::new("l", Likelihood::Logistic, Prior::Laplace { scale: 0.7 }, 1);
            // integrate the two halves separately so the kink sits on a node
            let half = quad_1d(
                |t: f64| (-((1.4f64).ln() + t / 0.7) / sf).exp(),
                0.0,
                60.0 * sf,
                400_000,
            );
            assert_abs_diff_eq!(log_alpha(&lap, s).unwrap(), (2.0 * half).ln(), epsilon = 1e-8);
        }
    }

    #[test]
    fn normal_subprior_is_inflated_normal() {
        let cov = vec![vec![2.0, 0.3], vec![0.3, 0.5]];
        let model = ModelSpec::new(
            "n",
            Likelihood::Logistic,
            Prior::Normal {
                mean: vec![0.5, -1.0],
                cov: cov.clone(),
            },
            2,
        );
        let data = Dataset::new(vec![0.0, 0.0], vec![1.0], 2).unwrap();
        for s in [1usize, 2, 7] {
            let sub = Subposterior::new(&model, &data, s).unwrap();
            let inflated = ModelSpec::new(
                "i",
                Likelihood::Logistic,
                Prior::Normal {
                    mean: vec![0.5, -1.0],
                    cov: cov.iter().map(|r| r.iter().map(|v| v * s as f64).collect()).collect(),
                },
                2,
            );
            for theta in [[0.0, 0.0], [1.3, -2.2], [-4.0, 3.0]] {
                let explicit = log_prior(&inflated, &theta).unwrap();
                assert_abs_diff_eq!(sub.log_subprior(&theta), explicit, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn laplace_subprior_is_inflated_laplace() {
        let model = ModelSpec::new("l", Likelihood::Logistic, Prior::Laplace { scale: 0.8 }, 2);
        let data = Dataset::new(vec![0.0, 0.0], vec![1.0], 2).unwrap();
        for s in [1usize, 3, 10] {
            let sub = Subposterior::new(&model, &data, s).unwrap();
            let inflated = ModelSpec::new("i", Likelihood::Logistic, Prior::Laplace { scale: 0.8 * s as f64 }, 2);
            for theta in [[0.0, 0.0], [1.3, -2.2], [-4.0, 3.0]] {
                assert_abs_diff_eq!(
                    sub.log_subprior(&theta),
                    log_prior(&inflated, &theta).unwrap(),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn subposterior_with_one_split_is_posterior_numerator() {
        let model = logistic(2);
        let shard = one_row(&[0.4, -1.2], 1.0);
        let theta = [0.3, 0.9];
        let sub = log_subposterior_unnorm(&model, &theta, &shard, 1).unwrap();
        let direct = log_likelihood(&model, &theta, &shard).unwrap() + log_prior(&model, &theta).unwrap();
        assert_eq!(sub, direct);
    }

    #[test]
    fn fragments_over_identical_shards_telescope() {
        let model = ModelSpec::new(
            "ln",
            Likelihood::LinearGaussianLognormalVar {
                log_sigma_mean: 0.0,
                log_sigma_sd: 1.0,
            },
            Prior::isotropic_normal(2, 1.0),
            2,
        );
        let shard = one_row(&[0.4, -1.2], 0.7);
        let theta = [0.3, 0.9, -0.2];
        for s in [2usize, 3, 8] {
            let total: f64 = (0..s)
                .map(|_| log_subposterior_unnorm(&model, &theta, &shard, s).unwrap())
                .sum::<f64>()
                + s as f64 * log_alpha(&model, s).unwrap();
            let full = s as f64 * log_likelihood(&model, &theta, &shard).unwrap() + log_prior(&model, &theta).unwrap();
            assert_abs_diff_eq!(total, full, epsilon = 1e-10);
        }
    }

    #[test]
    fn empty_likelihood_subposterior_is_explicit_subprior() {
        // x = 0 rows contribute a theta-independent constant n·log ½
        let model = logistic(1);
        let shard = one_row(&[0.0], 1.0);
        let sub = Subposterior::new(&model, &shard.data, 2).unwrap();
        let inflated = ModelSpec::new("i", Likelihood::Logistic, Prior::isotropic_normal(1, 2.0), 1);
        for t in [-1.0, 0.0, 2.5] {
            assert_abs_diff_eq!(
                sub.log_density(&[t]) - 0.5f64.ln(),
                log_prior(&inflated, &[t]).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = Dataset::new(vec![0.3, -1.0, 1.2, 0.5, -0.7, 2.0], vec![1.0, 0.0, 1.0], 2).unwrap();
        let ylin = Dataset::new(data.x.clone(), vec![0.4, -1.1, 2.0], 2).unwrap();
        let models = [
            (logistic(2), &data),
            (
                ModelSpec::new(
                    "ln",
                    Likelihood::LinearGaussianLognormalVar {
                        log_sigma_mean: 0.1,
                        log_sigma_sd: 0.5,
                    },
                    Prior::isotropic_normal(2, 2.0),
                    2,
                ),
                &ylin,
            ),
        ];
        for (model, d) in models {
            let sub = Subposterior::new(&model, d, 3).unwrap();
            let theta: Vec<f64> = (0..sub.dim()).map(|i| 0.2 * i as f64 - 0.3).collect();
            let (g, h) = sub.grad_hess(&theta);
            let eps = 1e-5;
            for a in 0..sub.dim() {
                let mut tp = theta.clone();
                tp[a] += eps;
                let mut tm = theta.clone();
                tm[a] -= eps;
                let fd = (sub.log_density(&tp) - sub.log_density(&tm)) / (2.0 * eps);
                assert_abs_diff_eq!(g[a], fd, epsilon = 1e-6);
                let (gp, _) = sub.grad_hess(&tp);
                let (gm, _) = sub.grad_hess(&tm);
                for b in 0..sub.dim() {
                    assert_abs_diff_eq!(h[(b, a)], (gp[b] - gm[b]) / (2.0 * eps), epsilon = 1e-5);
                }
            }
        }
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let text = "x2,y,x1\n1.5,1,0.25\n-2,0,3\n";
        let d = Dataset::from_reader(text.as_bytes()).unwrap();
        assert_eq!(d.p, 2);
        assert_eq!(d.x, vec![0.25, 1.5, 3.0, -2.0]);
        assert_eq!(d.y, vec![1.0, 0.0]);
        assert!(matches!(Dataset::from_reader("x1,x2\n1,2\n".as_bytes()), Err(Error::Input(_))));
        assert!(matches!(Dataset::from_reader("y,x1\n1,\n".as_bytes()), Err(Error::Input(_))));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        d.to_csv(&path).unwrap();
        assert_eq!(Dataset::from_csv(&path).unwrap(), d);
    }

    #[test]
    fn invalid_models_are_rejected() {
        let mut m = logistic(2);
        m.prior = Prior::Normal {
            mean: vec![0.0, 0.0],
            cov: vec![vec![1.0, 2.0], vec![2.0, 1.0]],
        };
        assert!(matches!(m.validate(), Err(Error::NotPositiveDefinite { .. })));
        let m = ModelSpec::new("l", Likelihood::Logistic, Prior::Laplace { scale: 0.0 }, 1);
        assert!(m.validate().is_err());
        let m = logistic(2).with_active_features(vec![1, 1]);
        assert!(m.validate().is_err());
    }
}
