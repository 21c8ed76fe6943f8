use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};
use crate::kernel::ProposalKernel;
use crate::target::{CostTier, FactorizedTarget, ParamVector};

/// `x | mu ~ N(mu, 1)`, `mu ~ N(0, sigma_mu^2)`; split into likelihood then prior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalNormalModel {
    pub x: f64,
    pub sigma_mu: f64,
    /// Random-walk standard deviation.
    pub proposal_sd: f64,
}

impl Default for NormalNormalModel {
    fn default() -> Self {
        Self {
            x: 3.0,
            sigma_mu: 10.0,
            proposal_sd: 10.0,
        }
    }
}

impl NormalNormalModel {
    pub fn new(x: f64, sigma_mu: f64) -> Result<Self> {
        if !(sigma_mu > 0.0) || !x.is_finite() {
            return Err(Error::InvalidArgument("need finite x and sigma_mu > 0".into()));
        }
        Ok(Self {
            x,
            sigma_mu,
            ..Default::default()
        })
    }
}

/// Closed-form posterior `(mean, variance)`.
pub fn nn_posterior_params(model: &NormalNormalModel) -> (f64, f64) {
    let shrink = 1.0 + model.sigma_mu.powi(-2);
    (model.x / shrink, 1.0 / shrink)
}

impl Model for NormalNormalModel {
    fn name(&self) -> &'static str {
        "normal-normal"
    }

    fn dimension(&self) -> usize {
        1
    }

    fn target(&self) -> Result<FactorizedTarget> {
        let x = self.x;
        let prec = self.sigma_mu.powi(-2);
        FactorizedTarget::builder(1)
            .factor("likelihood", CostTier::Cheap, move |t: &[f64]| -0.5 * (x - t[0]).powi(2))
            .factor("prior", CostTier::Expensive, move |t: &[f64]| -0.5 * prec * t[0] * t[0])
            .build()
    }

    fn reference_log_density(&self, theta: &[f64]) -> f64 {
        let (m, v) = nn_posterior_params(self);
        -0.5 * (theta[0] - m).powi(2) / v
    }

    fn initial_state(&self) -> ParamVector {
        ParamVector::new(vec![self.x])
    }

    fn default_kernel(&self) -> Result<ProposalKernel> {
        ProposalKernel::isotropic(1, self.proposal_sd)
    }
}
