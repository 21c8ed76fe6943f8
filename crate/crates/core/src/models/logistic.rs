//! Bayesian logistic regression with an optional artificial per-term cost.
//!
//! Factors: the diffuse Gaussian prior together with the likelihood of the
//! first `r` rows (cheap), then the likelihood of the remaining rows
//! (expensive). The cheap term, scaled by `(n - r) / r`, is the surrogate for
//! the expensive one; the prior's share of it is negligible at sd 10.

use std::hint::black_box;
use std::io::Read;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};
use crate::kernel::ProposalKernel;
use crate::target::{CostTier, FactorizedTarget, ParamVector};

/// Rows used for the MLE and its asymptotic covariance.
const PILOT_ROWS: usize = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticData {
    pub n: usize,
    pub p: usize,
    /// Row-major `n x p` design matrix.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl LogisticData {
    pub fn new(x: Vec<f64>, y: Vec<f64>, p: usize) -> Result<Self> {
        let n = y.len();
        if p == 0 || n == 0 || x.len() != n * p {
            return Err(Error::DimensionMismatch {
                expected: n * p,
                got: x.len(),
            });
        }
        if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::Data("labels must be 0 or 1".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite covariate".into()));
        }
        Ok(Self { n, p, x, y })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(file)
    }

    /// Header row required; the `label` column holds {0, 1}, all others are features.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let label = headers
            .iter()
            .position(|h| h == "label")
            .ok_or_else(|| Error::Data("no `label` column".into()))?;
        let p = headers.len() - 1;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != headers.len() {
                return Err(Error::Data(format!("row {} has {} fields", line + 1, record.len())));
            }
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Data(format!("row {}: cannot parse '{field}'", line + 1)))?;
                if j == label {
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::Data(format!("row {}: label {v} not in {{0, 1}}", line + 1)));
                    }
                    y.push(v);
                } else {
                    x.push(v);
                }
            }
        }
        Self::new(x, y, p)
    }
}

/// Standard-normal covariates and Bernoulli labels through the logistic link.
pub fn simulate_logistic(n: usize, p: usize, beta_true: &[f64], seed: u64) -> Result<LogisticData> {
    if n == 0 || p == 0 || beta_true.len() != p {
        return Err(Error::InvalidArgument(format!(
            "simulate_logistic needs n, p >= 1 and {p} coefficients"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let eta: f64 = row.iter().zip(beta_true).map(|(a, b)| a * b).sum();
        let prob = 1.0 / (1.0 + (-eta).exp());
        y.push(if rng.random::<f64>() < prob { 1.0 } else { 0.0 });
        x.extend(row);
    }
    LogisticData::new(x, y, p)
}

/// Coefficients used for simulated data when none are given.
pub fn default_beta(p: usize) -> Vec<f64> {
    const BASE: [f64; 5] = [1.0, -0.5, 0.25, 0.75, -1.0];
    (0..p).map(|i| BASE[i % BASE.len()]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogRange {
    Cheap,
    Expensive,
    All,
}

#[inline]
fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

#[inline]
fn burn(ops: u64) {
    let mut acc = 0.0f64;
    for i in 0..ops {
        acc = black_box(acc + i as f64);
    }
    black_box(acc);
}

fn rows_loglik(data: &LogisticData, rows: Range<usize>, beta: &[f64], cost_c: u64) -> f64 {
    let mut total = 0.0;
    for i in rows {
        let eta: f64 = data.row(i).iter().zip(beta).map(|(a, b)| a * b).sum();
        total += data.y[i] * eta - softplus(eta);
        if cost_c > 0 {
            burn(cost_c);
        }
    }
    total
}

#[derive(Clone, Debug)]
pub struct LogisticModel {
    data: Arc<LogisticData>,
    pub cost_c: u64,
    pub split_r: f64,
    pub prior_sd: f64,
    /// Multiplier on the asymptotic MLE covariance for the random walk.
    pub proposal_scale: f64,
    r: usize,
    mle: Vec<f64>,
    mle_cov: Vec<f64>,
}

impl LogisticModel {
    pub fn new(data: LogisticData, cost_c: u64, split_r: f64) -> Result<Self> {
        if !(split_r > 0.0 && split_r < 1.0) {
            return Err(Error::InvalidArgument(format!("split_r = {split_r} must lie in (0, 1)")));
        }
        if data.n < 2 {
            return Err(Error::InvalidArgument("need at least two observations".into()));
        }
        let r = ((split_r * data.n as f64).round() as usize).clamp(1, data.n - 1);
        let pilot = data.n.min(PILOT_ROWS);
        let mle = newton_mle(&data, pilot)?;
        let mut mle_cov = mle_covariance(&data, pilot, &mle)?;
        let shrink = pilot as f64 / data.n as f64;
        mle_cov.iter_mut().for_each(|v| *v *= shrink);
        Ok(Self {
            data: Arc::new(data),
            cost_c,
            split_r,
            prior_sd: 10.0,
            proposal_scale: 1.1,
            r,
            mle,
            mle_cov,
        })
    }

    pub fn data(&self) -> &LogisticData {
        &self.data
    }

    /// Number of rows in the cheap block.
    pub fn cheap_len(&self) -> usize {
        self.r
    }

    pub fn mle(&self) -> &[f64] {
        &self.mle
    }

    pub fn mle_covariance(&self) -> &[f64] {
        &self.mle_cov
    }

    fn range(&self, range: LogRange) -> Range<usize> {
        match range {
            LogRange::Cheap => 0..self.r,
            LogRange::Expensive => self.r..self.data.n,
            LogRange::All => 0..self.data.n,
        }
    }
}

pub fn logistic_loglik(model: &LogisticModel, beta: &[f64], range: LogRange) -> f64 {
    rows_loglik(&model.data, model.range(range), beta, model.cost_c)
}

fn newton_mle(data: &LogisticData, rows: usize) -> Result<Vec<f64>> {
    let p = data.p;
    let mut beta = DVector::<f64>::zeros(p);
    for _ in 0..100 {
        let mut grad = DVector::<f64>::zeros(p);
        let mut info = DMatrix::<f64>::zeros(p, p);
        for i in 0..rows {
            let xi = DVector::from_row_slice(data.row(i));
            let mu = 1.0 / (1.0 + (-xi.dot(&beta)).exp());
            grad.axpy(data.y[i] - mu, &xi, 1.0);
            info.ger(mu * (1.0 - mu), &xi, &xi, 1.0);
        }
        let step = info
            .cholesky()
            .ok_or_else(|| Error::Numerical("logistic information matrix is singular".into()))?
            .solve(&grad);
        beta += &step;
        if !beta.iter().all(|b| b.is_finite()) {
            break;
        }
        if step.amax() < 1e-10 {
            return Ok(beta.as_slice().to_vec());
        }
    }
    Err(Error::Numerical("logistic MLE did not converge (separable data?)".into()))
}

fn mle_covariance(data: &LogisticData, rows: usize, beta: &[f64]) -> Result<Vec<f64>> {
    let p = data.p;
    let b = DVector::from_row_slice(beta);
    let mut info = DMatrix::<f64>::zeros(p, p);
    for i in 0..rows {
        let xi = DVector::from_row_slice(data.row(i));
        let mu = 1.0 / (1.0 + (-xi.dot(&b)).exp());
        info.ger(mu * (1.0 - mu), &xi, &xi, 1.0);
    }
    let inv = info
        .try_inverse()
        .ok_or_else(|| Error::Numerical("logistic information matrix is singular".into()))?;
    let sym = (&inv + inv.transpose()) * 0.5;
    Ok(sym.transpose().as_slice().to_vec())
}

impl Model for LogisticModel {
    fn name(&self) -> &'static str {
        "logistic"
    }

    fn dimension(&self) -> usize {
        self.data.p
    }

    fn target(&self) -> Result<FactorizedTarget> {
        let prec = self.prior_sd.powi(-2);
        let (n, r, cost) = (self.data.n, self.r, self.cost_c);
        let head = self.data.clone();
        let tail = self.data.clone();
        FactorizedTarget::builder(self.data.p)
            .factor("prior-and-head", CostTier::Cheap, move |b: &[f64]| {
                -0.5 * prec * b.iter().map(|v| v * v).sum::<f64>() + rows_loglik(&head, 0..r, b, cost)
            })
            .factor("likelihood-tail", CostTier::Expensive, move |b: &[f64]| {
                rows_loglik(&tail, r..n, b, cost)
            })
            .surrogate(0, (n - r) as f64 / r as f64)
            .build()
    }

    fn reference_log_density(&self, theta: &[f64]) -> f64 {
        let prior = -0.5 * theta.iter().map(|v| v * v).sum::<f64>() / (self.prior_sd * self.prior_sd);
        prior + rows_loglik(&self.data, 0..self.data.n, theta, 0)
    }

    fn initial_state(&self) -> ParamVector {
        ParamVector::new(self.mle.clone())
    }

    fn default_kernel(&self) -> Result<ProposalKernel> {
        let s2 = self.proposal_scale * self.proposal_scale;
        ProposalKernel::random_walk(self.data.p, self.mle_cov.iter().map(|v| v * s2).collect())
    }
}
