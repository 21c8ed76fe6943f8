//! Benchmark targets, each with a factorization and an unfactored reference density.

pub mod betabin;
pub mod logistic;
pub mod mixture;
pub mod normal;
pub mod quadrature;

use crate::error::Result;
use crate::kernel::ProposalKernel;
use crate::target::{log_ratio_from_terms, FactorizedTarget, ParamVector};

pub use betabin::BetaBinomialModel;
pub use logistic::{LogisticData, LogisticModel, LogRange};
pub use mixture::{MixtureModel, MixtureParams};
pub use normal::NormalNormalModel;
pub use quadrature::Quadrature;

pub trait Model: Send + Sync {
    fn name(&self) -> &'static str;

    fn dimension(&self) -> usize;

    fn target(&self) -> Result<FactorizedTarget>;

    /// Log density up to a constant, computed without the factorization.
    fn reference_log_density(&self, theta: &[f64]) -> f64;

    fn reference_log_ratio(&self, current: &[f64], proposed: &[f64]) -> f64 {
        log_ratio_from_terms(
            self.reference_log_density(current),
            self.reference_log_density(proposed),
        )
    }

    fn initial_state(&self) -> ParamVector;

    /// Documented default random-walk proposal.
    fn default_kernel(&self) -> Result<ProposalKernel>;
}

#[cfg(test)]
pub(crate) mod testing {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::Model;

    /// Factor sums against the reference ratio on random pairs around the initial state.
    pub fn check_factor_sum(model: &dyn Model, spread: f64, pairs: usize, tol: f64) {
        let target = model.target().unwrap();
        let init = model.initial_state();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let jitter = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            init.iter().map(|v| v + spread * (rng.random::<f64>() - 0.5)).collect()
        };
        let mut checked = 0;
        for _ in 0..pairs {
            let a = jitter(&mut rng);
            let b = jitter(&mut rng);
            let reference = model.reference_log_ratio(&a, &b);
            let cur = target.terms(&a);
            if cur.contains(&f64::NEG_INFINITY) {
                continue;
            }
            let factored = target.total_log_ratio(&a, &b).unwrap();
            if reference == f64::NEG_INFINITY {
                assert_eq!(factored, f64::NEG_INFINITY);
            } else {
                assert!(
                    (factored - reference).abs() <= tol,
                    "{}: {factored} vs {reference}",
                    model.name()
                );
            }
            checked += 1;
        }
        assert!(checked > pairs / 2);
    }
}
