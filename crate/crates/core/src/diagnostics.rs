//! Chain-quality metrics: autocorrelation, integrated autocorrelation time,
//! effective sample size, and the relative gain of one sampler over another.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::chain::ChainTrace;
use crate::error::{Error, Result};
use crate::sampler::RunStats;

/// Shortest series accepted by the public autocorrelation-time estimators.
pub const MIN_SERIES: usize = 1000;

/// Normalized autocovariance at lags `0..len`, via zero-padded FFT.
fn acf_full(series: &[f64]) -> Vec<f64> {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .map(|x| Complex::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re;
    if !(c0 > 0.0) {
        let mut out = vec![0.0; n];
        out[0] = 1.0;
        return out;
    }
    buf[..n].iter().map(|z| z.re / c0).collect()
}

/// Biased-normalized autocorrelation at lags `0..=max_lag`.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if series.len() <= max_lag {
        return Err(Error::SeriesTooShort {
            needed: max_lag + 1,
            got: series.len(),
        });
    }
    let mut acf = acf_full(series);
    acf.truncate(max_lag + 1);
    acf[0] = 1.0;
    Ok(acf)
}

/// Initial positive sequence estimate without the length check; a constant
/// series gets `tau = T`.
fn iat(series: &[f64]) -> f64 {
    let n = series.len();
    if series.iter().all(|x| *x == series[0]) {
        return n as f64;
    }
    let acf = acf_full(series);
    let mut sum = 0.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = acf[2 * m] + acf[2 * m + 1];
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        m += 1;
    }
    (2.0 * sum - 1.0).max(1.0)
}

pub fn integrated_autocorrelation_time(series: &[f64]) -> Result<f64> {
    if series.len() < MIN_SERIES {
        return Err(Error::SeriesTooShort {
            needed: MIN_SERIES,
            got: series.len(),
        });
    }
    Ok(iat(series))
}

pub fn effective_sample_size(series: &[f64]) -> Result<f64> {
    Ok(series.len() as f64 / integrated_autocorrelation_time(series)?)
}

/// Minimum per-coordinate ESS of a trace, and the matching `tau`.
pub fn trace_ess(trace: &ChainTrace) -> Result<(f64, f64)> {
    let t = trace.len();
    if t < 2 {
        return Err(Error::SeriesTooShort { needed: 2, got: t });
    }
    let d = trace.states[0].len();
    let tau = (0..d).map(|j| iat(&trace.column(j))).fold(1.0f64, f64::max);
    Ok((t as f64 / tau, tau))
}

/// `(ess_da / t_da) / (ess_mh / t_mh)`.
pub fn relative_gain(ess_da: f64, t_da: f64, ess_mh: f64, t_mh: f64) -> Result<f64> {
    if !(t_da > 0.0) || !(t_mh > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "run times must be positive, got {t_da} and {t_mh}"
        )));
    }
    if !(ess_mh > 0.0) || ess_da < 0.0 {
        return Err(Error::InvalidArgument("effective sample sizes must be positive".into()));
    }
    Ok((ess_da / t_da) / (ess_mh / t_mh))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Minimum over coordinates.
    pub ess: f64,
    pub tau: f64,
    /// ESS divided by the number of recorded draws.
    pub relative_ess: f64,
    pub samples: usize,
    pub acceptance_rate: f64,
    pub wall_seconds: f64,
    pub draws_per_iteration: f64,
    pub cheap_evals: u64,
    pub expensive_evals: u64,
    pub rg: Option<f64>,
}

impl DiagnosticsReport {
    pub fn from_run(trace: &ChainTrace, stats: &RunStats) -> Result<Self> {
        let (ess, tau) = trace_ess(trace)?;
        Ok(Self {
            ess,
            tau,
            relative_ess: ess / trace.len() as f64,
            samples: trace.len(),
            acceptance_rate: stats.acceptance_rate(),
            wall_seconds: stats.wall_seconds,
            draws_per_iteration: stats.draws_per_round(),
            cheap_evals: stats.cheap_evals,
            expensive_evals: stats.expensive_evals,
            rg: None,
        })
    }
}

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the one-sample KS statistic `d` with `n` samples.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let term = 2.0 * (-1.0f64).powi(j - 1) * (-2.0 * (j as f64 * lambda).powi(2)).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}
