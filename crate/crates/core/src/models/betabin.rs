//! Beta-binomial posterior with the binomial likelihood split into Bernoulli blocks.

use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};
use crate::kernel::ProposalKernel;
use crate::target::{CostTier, FactorizedTarget, ParamVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaBinomialModel {
    pub n: u64,
    pub x: u64,
    pub a: f64,
    pub b: f64,
    pub parts: usize,
    pub proposal_sd: f64,
    successes: Vec<u64>,
    failures: Vec<u64>,
}

/// Block visiting order 0, m-1, 1, m-2, ...
fn outside_in(m: usize) -> Vec<usize> {
    let (mut lo, mut hi) = (0usize, m - 1);
    let mut order = Vec::with_capacity(m);
    while lo <= hi {
        order.push(lo);
        if hi != lo {
            order.push(hi);
        }
        lo += 1;
        if hi == 0 {
            break;
        }
        hi -= 1;
    }
    order
}

/// Deals the `x` successes, then the `n - x` failures, round-robin over the
/// blocks in outside-in order. Returns per-block (successes, failures).
pub fn partition_trials(n: u64, x: u64, parts: usize) -> (Vec<u64>, Vec<u64>) {
    let order = outside_in(parts);
    let mut s = vec![0; parts];
    let mut f = vec![0; parts];
    for i in 0..n {
        let block = order[(i % parts as u64) as usize];
        if i < x {
            s[block] += 1;
        } else {
            f[block] += 1;
        }
    }
    (s, f)
}

impl BetaBinomialModel {
    pub fn new(n: u64, x: u64, a: f64, b: f64, parts: usize) -> Result<Self> {
        if x > n || parts == 0 || parts as u64 > n.max(1) || !(a > 0.0) || !(b > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "invalid beta-binomial setup n={n} x={x} a={a} b={b} parts={parts}"
            )));
        }
        let (successes, failures) = partition_trials(n, x, parts);
        Ok(Self {
            n,
            x,
            a,
            b,
            parts,
            proposal_sd: 0.09,
            successes,
            failures,
        })
    }

    pub fn block_counts(&self) -> (&[u64], &[u64]) {
        (&self.successes, &self.failures)
    }

    /// Posterior `Be(x + a, n + b - x)` parameters.
    pub fn posterior(&self) -> (f64, f64) {
        (self.x as f64 + self.a, (self.n - self.x) as f64 + self.b)
    }
}

/// Log-likelihood of one block's Bernoulli trials at `p`; `-inf` outside (0, 1).
pub fn betabin_block_loglik(model: &BetaBinomialModel, p: f64, block: usize) -> f64 {
    assert!(block < model.parts, "block {block} out of range");
    block_loglik(model.successes[block], model.failures[block], p)
}

fn block_loglik(s: u64, f: u64, p: f64) -> f64 {
    if !(p > 0.0 && p < 1.0) {
        return f64::NEG_INFINITY;
    }
    s as f64 * p.ln() + f as f64 * (-p).ln_1p()
}

impl Model for BetaBinomialModel {
    fn name(&self) -> &'static str {
        "beta-binomial"
    }

    fn dimension(&self) -> usize {
        1
    }

    fn target(&self) -> Result<FactorizedTarget> {
        let (a, b) = (self.a, self.b);
        let mut builder = FactorizedTarget::builder(1).factor("prior", CostTier::Cheap, move |t: &[f64]| {
            let p = t[0];
            if !(p > 0.0 && p < 1.0) {
                return f64::NEG_INFINITY;
            }
            (a - 1.0) * p.ln() + (b - 1.0) * (-p).ln_1p()
        });
        for (k, (&s, &f)) in self.successes.iter().zip(&self.failures).enumerate() {
            builder = builder.factor(format!("block-{k}"), CostTier::Expensive, move |t: &[f64]| {
                block_loglik(s, f, t[0])
            });
        }
        builder.build()
    }

    fn reference_log_density(&self, theta: &[f64]) -> f64 {
        let p = theta[0];
        if !(p > 0.0 && p < 1.0) {
            return f64::NEG_INFINITY;
        }
        let (alpha, beta) = self.posterior();
        (alpha - 1.0) * p.ln() + (beta - 1.0) * (1.0 - p).ln()
    }

    fn initial_state(&self) -> ParamVector {
        let (alpha, beta) = self.posterior();
        ParamVector::new(vec![alpha / (alpha + beta)])
    }

    fn default_kernel(&self) -> Result<ProposalKernel> {
        ProposalKernel::isotropic(1, self.proposal_sd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::check_factor_sum;

    fn reference_model(parts: usize) -> BetaBinomialModel {
        BetaBinomialModel::new(100, 32, 7.5, 0.5, parts).unwrap()
    }

    #[test]
    fn ten_block_partition() {
        let m = reference_model(10);
        let (s, f) = m.block_counts();
        assert_eq!(s, &[4, 3, 3, 3, 3, 3, 3, 3, 3, 4]);
        assert_eq!(f, &[6, 7, 7, 7, 7, 7, 7, 7, 7, 6]);
    }

    #[test]
    fn blocks_sum_to_full_likelihood() {
        for parts in [1, 3, 10, 20, 50, 100] {
            let m = reference_model(parts);
            for p in [0.05, 0.32, 0.5, 0.9] {
                let total: f64 = (0..parts).map(|k| betabin_block_loglik(&m, p, k)).sum();
                let full = 32.0 * f64::ln(p) + 68.0 * f64::ln(1.0 - p);
                assert!((total - full).abs() < 1e-10, "parts={parts} p={p}");
            }
        }
        let m = reference_model(7);
        let total: f64 = (0..7).map(|k| betabin_block_loglik(&m, 0.5, k)).sum();
        assert!((total - 100.0 * 0.5f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn outside_support_is_rejection() {
        let m = reference_model(10);
        assert_eq!(betabin_block_loglik(&m, 0.0, 0), f64::NEG_INFINITY);
        assert_eq!(betabin_block_loglik(&m, 1.2, 3), f64::NEG_INFINITY);
    }

    #[test]
    fn outside_in_order() {
        assert_eq!(outside_in(1), vec![0]);
        assert_eq!(outside_in(4), vec![0, 3, 1, 2]);
        assert_eq!(outside_in(5), vec![0, 4, 1, 3, 2]);
    }

    #[test]
    fn factors_sum_to_reference() {
        for parts in [1, 10, 100] {
            check_factor_sum(&reference_model(parts), 0.3, 1000, 1e-10);
        }
    }
}
