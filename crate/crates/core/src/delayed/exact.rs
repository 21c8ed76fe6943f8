//! Exact transition matrices on small discrete state spaces.
//!
//! Used as the stationarity oracle: with the target written as a product of
//! per-state weights, `pi(x) ∝ prod_k w_k(x)`, the delayed-acceptance kernel is
//! `P(x, y) = q(x, y) prod_k min(rho_k(x, y), 1)` for `y != x`, where the first
//! factor also carries the proposal ratio.

use crate::error::{Error, Result};

pub const MAX_STATES: usize = 100;

/// Per-state positive weights whose product is proportional to the target.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSplit {
    pub weights: Vec<Vec<f64>>,
}

impl DiscreteSplit {
    /// The trivial split with a single factor equal to the target.
    pub fn single(target: &[f64]) -> Self {
        Self {
            weights: vec![target.to_vec()],
        }
    }

    pub fn factors(&self) -> usize {
        self.weights.len()
    }
}

fn validate(target: &[f64], proposal: &[Vec<f64>]) -> Result<usize> {
    let n = target.len();
    if n == 0 || n > MAX_STATES {
        return Err(Error::InvalidArgument(format!(
            "state space size {n} outside 1..={MAX_STATES}"
        )));
    }
    if target.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::InvalidArgument("target must be strictly positive".into()));
    }
    if proposal.len() != n || proposal.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: proposal.len(),
        });
    }
    for (x, row) in proposal.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::RowSum { row: x, sum });
        }
    }
    for x in 0..n {
        for y in 0..n {
            let (a, b) = (proposal[x][y], proposal[y][x]);
            if a < 0.0 || (a > 0.0) != (b > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "proposal must be nonnegative with symmetric support ({x},{y})"
                )));
            }
        }
    }
    Ok(n)
}

fn assemble(
    n: usize,
    proposal: &[Vec<f64>],
    accept: impl Fn(usize, usize) -> f64,
) -> Result<Vec<Vec<f64>>> {
    let mut p = vec![vec![0.0; n]; n];
    for x in 0..n {
        let mut off = 0.0;
        for y in 0..n {
            if y != x && proposal[x][y] > 0.0 {
                p[x][y] = proposal[x][y] * accept(x, y);
                off += p[x][y];
            }
        }
        p[x][x] = 1.0 - off;
        let sum: f64 = p[x].iter().sum();
        if (sum - 1.0).abs() > 1e-12 || p[x][x] < -1e-12 {
            return Err(Error::RowSum { row: x, sum });
        }
    }
    Ok(p)
}

/// Exact delayed-acceptance transition matrix.
pub fn exact_da_kernel(
    target: &[f64],
    proposal: &[Vec<f64>],
    split: &DiscreteSplit,
) -> Result<Vec<Vec<f64>>> {
    let n = validate(target, proposal)?;
    if split.weights.is_empty() || split.weights.iter().any(|w| w.len() != n) {
        return Err(Error::InvalidArgument("split must provide one weight per state".into()));
    }
    if split.weights.iter().flatten().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidArgument("split weights must be positive".into()));
    }
    // prod_k w_k(x) / pi(x) must not depend on x.
    let ratios: Vec<f64> = (0..n)
        .map(|x| split.weights.iter().map(|w| w[x]).product::<f64>() / target[x])
        .collect();
    if ratios.iter().any(|r| ((r - ratios[0]) / ratios[0]).abs() > 1e-10) {
        return Err(Error::InvalidArgument("split does not factor the target".into()));
    }
    assemble(n, proposal, |x, y| {
        split
            .weights
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let mut rho = w[y] / w[x];
                if k == 0 {
                    rho *= proposal[y][x] / proposal[x][y];
                }
                rho.min(1.0)
            })
            .product()
    })
}

/// Plain Metropolis-Hastings transition matrix.
pub fn plain_mh_kernel(target: &[f64], proposal: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = validate(target, proposal)?;
    assemble(n, proposal, |x, y| {
        ((target[y] * proposal[y][x]) / (target[x] * proposal[x][y])).min(1.0)
    })
}
