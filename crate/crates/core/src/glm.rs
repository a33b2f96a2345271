//! Regression numerics: logistic regression by iteratively reweighted least
//! squares and weighted linear least squares, both solved through a
//! Householder QR of the row-weighted design.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("design has {rows} rows but response has {len} entries")]
    LengthMismatch { rows: usize, len: usize },
    #[error("weights must be finite and nonnegative")]
    InvalidWeights,
    #[error("response for logistic regression must be 0/1")]
    NonBinaryResponse,
    #[error("design matrix has a non-finite entry at row {row}, column '{column}'")]
    NonFinite { row: usize, column: String },
    #[error("duplicate column name '{0}'")]
    DuplicateColumn(String),
    #[error("design is rank deficient at column '{0}'")]
    RankDeficient(String),
    #[error("separation: coefficient of '{column}' diverged ({value:.3e})")]
    Separation { column: String, value: f64 },
    #[error("total weight {total} does not exceed the number of columns {cols}")]
    InsufficientWeight { total: f64, cols: usize },
    #[error("column mismatch: fit has {expected:?}, design has {found:?}")]
    ColumnMismatch { expected: Vec<String>, found: Vec<String> },
}

/// Dense row-major design matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    names: Vec<String>,
    rows: usize,
    values: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(names: Vec<String>, rows: usize, values: Vec<f64>) -> Result<Self, GlmError> {
        assert_eq!(values.len(), rows * names.len(), "design buffer size");
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(GlmError::DuplicateColumn(n.clone()));
            }
        }
        let p = names.len();
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(GlmError::NonFinite { row: pos / p, column: names[pos % p].clone() });
        }
        Ok(Self { names, rows, values })
    }

    pub fn from_rows<S: Into<String>>(names: Vec<S>, rows: &[Vec<f64>]) -> Result<Self, GlmError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut values = Vec::with_capacity(rows.len() * names.len());
        for r in rows {
            assert_eq!(r.len(), names.len(), "row width");
            values.extend_from_slice(r);
        }
        Self::new(names, rows.len(), values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.cols();
        &self.values[i * p..(i + 1) * p]
    }

    fn weighted(&self, sqrt_w: &[f64]) -> DMatrix<f64> {
        let p = self.cols();
        DMatrix::from_fn(self.rows, p, |i, k| self.values[i * p + k] * sqrt_w[i])
    }

    fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), beta)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Logistic,
    Linear,
}

#[derive(Debug, Clone)]
pub struct GlmFit {
    pub family: Family,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Linear fits only.
    pub residual_sd: Option<f64>,
    pub log_likelihood: f64,
}

impl GlmFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|k| self.coefficients[k])
    }

    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.coefficients.len()).map(|k| self.covariance[(k, k)].max(0.0).sqrt()).collect()
    }

    fn check_columns(&self, x: &DesignMatrix) -> Result<(), GlmError> {
        if x.names() != self.names.as_slice() {
            return Err(GlmError::ColumnMismatch { expected: self.names.clone(), found: x.names().to_vec() });
        }
        Ok(())
    }

    /// Linear predictor for a single row given in fit column order.
    pub fn eta(&self, row: &[f64]) -> f64 {
        dot(row, &self.coefficients)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LogisticOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// |coefficient| above this is reported as separation.
    pub divergence_bound: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100, divergence_bound: 30.0 }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn inv_logit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^eta) without overflow.
pub fn log1p_exp(eta: f64) -> f64 {
    if eta > 35.0 {
        eta
    } else if eta < -35.0 {
        eta.exp()
    } else {
        eta.exp().ln_1p()
    }
}

/// Bernoulli log-likelihood of a 0/1 response under a logit linear predictor.
pub fn bernoulli_logit_ll(y: f64, eta: f64) -> f64 {
    y * eta - log1p_exp(eta)
}

fn check_inputs(x: &DesignMatrix, y: &[f64], w: &[f64]) -> Result<(), GlmError> {
    if x.rows() != y.len() || w.len() != y.len() {
        return Err(GlmError::LengthMismatch { rows: x.rows(), len: y.len().min(w.len()) });
    }
    if w.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
        return Err(GlmError::InvalidWeights);
    }
    Ok(())
}

/// Weighted Bernoulli log-likelihood at `beta`.
pub fn logistic_log_likelihood(x: &DesignMatrix, y: &[f64], w: &[f64], beta: &[f64]) -> f64 {
    (0..x.rows()).map(|i| w[i] * bernoulli_logit_ll(y[i], dot(x.row(i), beta))).sum()
}

/// Analytic score `X' W (y - p)` of the weighted Bernoulli log-likelihood.
pub fn logistic_score(x: &DesignMatrix, y: &[f64], w: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        let r = w[i] * (y[i] - inv_logit(dot(x.row(i), beta)));
        for (gk, xk) in g.iter_mut().zip(x.row(i)) {
            *gk += r * xk;
        }
    }
    g
}

struct WeightedQr {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

fn weighted_qr(x: &DesignMatrix, sqrt_w: &[f64]) -> Result<WeightedQr, GlmError> {
    let m = x.weighted(sqrt_w);
    let norm = m.norm();
    let qr = m.qr();
    let r = qr.r();
    let tol = 1e-10 * norm.max(f64::MIN_POSITIVE);
    for k in 0..x.cols() {
        if r[(k, k)].abs() <= tol {
            return Err(GlmError::RankDeficient(x.names()[k].clone()));
        }
    }
    Ok(WeightedQr { q: qr.q(), r })
}

impl WeightedQr {
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let qtb = self.q.transpose() * DVector::from_column_slice(rhs);
        let sol = self.r.solve_upper_triangular(&qtb).expect("nonsingular R");
        sol.iter().copied().collect()
    }

    /// (R'R)^-1 = (X'WX)^-1
    fn inverse_gram(&self) -> DMatrix<f64> {
        let p = self.r.ncols();
        let rinv = self.r.solve_upper_triangular(&DMatrix::identity(p, p)).expect("nonsingular R");
        let cov = &rinv * rinv.transpose();
        (&cov + cov.transpose()) * 0.5
    }
}

/// Maximum-likelihood logistic regression by IRLS with step halving.
pub fn fit_logistic(x: &DesignMatrix, y: &[f64], w: &[f64], opts: LogisticOptions) -> Result<GlmFit, GlmError> {
    check_inputs(x, y, w)?;
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(GlmError::NonBinaryResponse);
    }
    let n = x.rows();
    let p = x.cols();
    let sqrt_prior: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    weighted_qr(x, &sqrt_prior)?;

    let mut beta = vec![0.0; p];
    let mut ll = logistic_log_likelihood(x, y, w, &beta);
    let mut iterations = 0;
    let mut converged = false;
    let mut sqrt_w = vec![0.0; n];
    let mut z = vec![0.0; n];
    loop {
        let score = logistic_score(x, y, w, &beta);
        if score.iter().all(|g| g.abs() < opts.tol) {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;
        for i in 0..n {
            let eta = dot(x.row(i), &beta);
            let mu = inv_logit(eta);
            let v = (mu * (1.0 - mu)).max(1e-300);
            sqrt_w[i] = (w[i] * v).sqrt();
            z[i] = sqrt_w[i] * (eta + (y[i] - mu) / v);
        }
        let qr = weighted_qr(x, &sqrt_w)?;
        let target = qr.solve(&z);
        let step: Vec<f64> = target.iter().zip(&beta).map(|(t, b)| t - b).collect();

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let cand_ll = logistic_log_likelihood(x, y, w, &cand);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if let Some(k) = beta.iter().position(|b| !b.is_finite() || b.abs() > opts.divergence_bound) {
            return Err(GlmError::Separation { column: x.names()[k].clone(), value: beta[k] });
        }
        if !accepted {
            break;
        }
    }

    for i in 0..n {
        let mu = inv_logit(dot(x.row(i), &beta));
        sqrt_w[i] = (w[i] * mu * (1.0 - mu)).sqrt();
    }
    let covariance = weighted_qr(x, &sqrt_w)?.inverse_gram();
    Ok(GlmFit {
        family: Family::Logistic,
        names: x.names().to_vec(),
        coefficients: beta,
        covariance,
        converged,
        iterations,
        residual_sd: None,
        log_likelihood: ll,
    })
}

/// Weighted least squares. `residual_sd = sqrt(wRSS / (sum w - p))`.
pub fn fit_linear(x: &DesignMatrix, y: &[f64], w: &[f64]) -> Result<GlmFit, GlmError> {
    check_inputs(x, y, w)?;
    let p = x.cols();
    let total: f64 = w.iter().sum();
    if total <= p as f64 {
        return Err(GlmError::InsufficientWeight { total, cols: p });
    }
    let sqrt_w: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let qr = weighted_qr(x, &sqrt_w)?;
    let rhs: Vec<f64> = y.iter().zip(&sqrt_w).map(|(v, s)| v * s).collect();
    let beta = qr.solve(&rhs);
    let eta = x.linear_predictor(&beta);
    let rss: f64 = (0..y.len()).map(|i| w[i] * (y[i] - eta[i]).powi(2)).sum();
    let sigma2 = rss / (total - p as f64);
    let ml_var = (rss / total).max(f64::MIN_POSITIVE);
    let log_likelihood = -0.5 * total * ((2.0 * std::f64::consts::PI * ml_var).ln() + 1.0);
    Ok(GlmFit {
        family: Family::Linear,
        names: x.names().to_vec(),
        coefficients: beta,
        covariance: qr.inverse_gram() * sigma2,
        converged: true,
        iterations: 1,
        residual_sd: Some(sigma2.sqrt()),
        log_likelihood,
    })
}

/// `logit^-1(X beta)` row by row.
pub fn predict_prob(fit: &GlmFit, x: &DesignMatrix) -> Result<Vec<f64>, GlmError> {
    fit.check_columns(x)?;
    Ok(x.linear_predictor(&fit.coefficients).into_iter().map(inv_logit).collect())
}

/// `X beta` row by row.
pub fn predict_linear(fit: &GlmFit, x: &DesignMatrix) -> Result<Vec<f64>, GlmError> {
    fit.check_columns(x)?;
    Ok(x.linear_predictor(&fit.coefficients))
}
