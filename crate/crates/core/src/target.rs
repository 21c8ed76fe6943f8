//! Factorized targets.
//!
//! A target is a list of log terms whose sum is the log density (up to a
//! constant). The acceptance ratio for a symmetric random walk then splits
//! into one factor per term, `log rho_k = term_k(proposed) - term_k(current)`,
//! and the product of the factors is the full Metropolis-Hastings ratio.
//!
//! Terms return `-inf` outside the support; any other non-finite value is a
//! hard error once it is consumed by an acceptance decision.

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type FactorId = usize;

/// A point in parameter space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostTier {
    Cheap,
    Expensive,
}

/// One additive piece of the log target.
pub trait LogTerm: Send + Sync {
    fn log_term(&self, theta: &[f64]) -> f64;
}

impl<F> LogTerm for F
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn log_term(&self, theta: &[f64]) -> f64 {
        self(theta)
    }
}

#[derive(Clone)]
pub struct Factor {
    id: FactorId,
    name: String,
    cost: CostTier,
    term: Arc<dyn LogTerm>,
}

impl fmt::Debug for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Factor")
            .field("id", &self.id)
            .field("name", &self.name)
            .field("cost", &self.cost)
            .finish()
    }
}

impl Factor {
    pub fn id(&self) -> FactorId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn cost(&self) -> CostTier {
        self.cost
    }

    /// Raw log term at `theta`; may be `-inf` outside the support.
    pub fn term(&self, theta: &[f64]) -> f64 {
        self.term.log_term(theta)
    }

    /// `log rho_k(current, proposed)`.
    pub fn log_ratio(&self, current: &[f64], proposed: &[f64]) -> Result<f64> {
        let cur = self.checked(self.term(current))?;
        if cur == f64::NEG_INFINITY {
            return Err(Error::InitialOutsideSupport);
        }
        let prop = self.checked(self.term(proposed))?;
        Ok(log_ratio_from_terms(cur, prop))
    }

    /// Accepts finite values and `-inf`; everything else is a hard error.
    pub(crate) fn checked(&self, value: f64) -> Result<f64> {
        if value.is_finite() || value == f64::NEG_INFINITY {
            Ok(value)
        } else {
            Err(Error::NonFiniteFactor {
                id: self.id,
                name: self.name.clone(),
                value,
            })
        }
    }
}

/// Single definition of the ratio arithmetic so every code path agrees bitwise.
#[inline]
pub fn log_ratio_from_terms(current: f64, proposed: f64) -> f64 {
    if proposed == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        proposed - current
    }
}

/// Plug-in estimate of the expensive block's log ratio from one cheap factor:
/// `log rho_hat = scale * log rho_source`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub source: FactorId,
    pub scale: f64,
}

#[derive(Clone, Debug)]
pub struct FactorizedTarget {
    dimension: usize,
    factors: Vec<Factor>,
    surrogate: Option<Surrogate>,
}

impl FactorizedTarget {
    pub fn builder(dimension: usize) -> TargetBuilder {
        TargetBuilder {
            dimension,
            factors: Vec::new(),
            surrogate: None,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factor(&self, id: FactorId) -> &Factor {
        &self.factors[id]
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn surrogate(&self) -> Option<Surrogate> {
        self.surrogate
    }

    /// Number of leading cheap factors.
    pub fn cheap_count(&self) -> usize {
        self.factors
            .iter()
            .take_while(|f| f.cost == CostTier::Cheap)
            .count()
    }

    pub fn ids_with_cost(&self, cost: CostTier) -> impl Iterator<Item = FactorId> + '_ {
        self.factors
            .iter()
            .filter(move |f| f.cost == cost)
            .map(Factor::id)
    }

    /// All raw terms at `theta`, in id order.
    pub fn terms(&self, theta: &[f64]) -> Vec<f64> {
        self.factors.iter().map(|f| f.term(theta)).collect()
    }

    /// Sum of the log ratios of every factor; `-inf` when the proposal leaves the support.
    pub fn total_log_ratio(&self, current: &[f64], proposed: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for f in &self.factors {
            total += f.log_ratio(current, proposed)?;
        }
        Ok(total)
    }

    pub fn check_dimension(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: theta.len(),
            });
        }
        Ok(())
    }
}

pub struct TargetBuilder {
    dimension: usize,
    factors: Vec<Factor>,
    surrogate: Option<Surrogate>,
}

impl TargetBuilder {
    pub fn factor(
        mut self,
        name: impl Into<String>,
        cost: CostTier,
        term: impl LogTerm + 'static,
    ) -> Self {
        let id = self.factors.len();
        self.factors.push(Factor {
            id,
            name: name.into(),
            cost,
            term: Arc::new(term),
        });
        self
    }

    pub fn shared_factor(mut self, name: impl Into<String>, cost: CostTier, term: Arc<dyn LogTerm>) -> Self {
        let id = self.factors.len();
        self.factors.push(Factor {
            id,
            name: name.into(),
            cost,
            term,
        });
        self
    }

    pub fn surrogate(mut self, source: FactorId, scale: f64) -> Self {
        self.surrogate = Some(Surrogate { source, scale });
        self
    }

    pub fn build(self) -> Result<FactorizedTarget> {
        if self.dimension == 0 {
            return Err(Error::InvalidArgument("target dimension must be >= 1".into()));
        }
        if self.factors.is_empty() {
            return Err(Error::InvalidArgument("target needs at least one factor".into()));
        }
        // Cheap block must come first: tour pruning evaluates it before any worker runs.
        let first_expensive = self
            .factors
            .iter()
            .position(|f| f.cost == CostTier::Expensive)
            .unwrap_or(self.factors.len());
        if self.factors[first_expensive..]
            .iter()
            .any(|f| f.cost == CostTier::Cheap)
        {
            return Err(Error::FactorOrder(
                "cheap factors must be declared before expensive ones".into(),
            ));
        }
        if let Some(s) = self.surrogate {
            if s.source >= self.factors.len() || self.factors[s.source].cost != CostTier::Cheap {
                return Err(Error::InvalidArgument(
                    "surrogate source must be a cheap factor".into(),
                ));
            }
            if !s.scale.is_finite() {
                return Err(Error::InvalidArgument("surrogate scale must be finite".into()));
            }
        }
        Ok(FactorizedTarget {
            dimension: self.dimension,
            factors: self.factors,
            surrogate: self.surrogate,
        })
    }
}

/// A chain state together with the log terms evaluated there.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainPoint {
    pub theta: ParamVector,
    pub terms: Vec<f64>,
}

impl ChainPoint {
    /// Evaluates every term at `theta`; the point must lie inside the support.
    pub fn new(target: &FactorizedTarget, theta: ParamVector) -> Result<Self> {
        target.check_dimension(&theta)?;
        let mut terms = Vec::with_capacity(target.len());
        for f in target.factors() {
            let v = f.checked(f.term(&theta))?;
            if v == f64::NEG_INFINITY {
                return Err(Error::InitialOutsideSupport);
            }
            terms.push(v);
        }
        Ok(Self { theta, terms })
    }

    pub fn log_target(&self) -> f64 {
        self.terms.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_factor() -> FactorizedTarget {
        FactorizedTarget::builder(1)
            .factor("lik", CostTier::Cheap, |t: &[f64]| -0.5 * (t[0] - 1.0).powi(2))
            .factor("prior", CostTier::Expensive, |t: &[f64]| -0.5 * t[0] * t[0] / 4.0)
            .build()
            .unwrap()
    }

    #[test]
    fn ratios_sum_to_full_ratio() {
        let target = two_factor();
        let (a, b) = ([0.3], [1.7]);
        let full = -0.5 * (b[0] - 1.0f64).powi(2) - b[0] * b[0] / 8.0
            - (-0.5 * (a[0] - 1.0f64).powi(2) - a[0] * a[0] / 8.0);
        let sum = target.total_log_ratio(&a, &b).unwrap();
        assert!((sum - full).abs() < 1e-12);
    }

    #[test]
    fn cheap_after_expensive_rejected() {
        let r = FactorizedTarget::builder(1)
            .factor("e", CostTier::Expensive, |_: &[f64]| 0.0)
            .factor("c", CostTier::Cheap, |_: &[f64]| 0.0)
            .build();
        assert!(matches!(r, Err(Error::FactorOrder(_))));
    }

    #[test]
    fn nan_term_is_hard_error_and_neg_inf_is_rejection() {
        let target = FactorizedTarget::builder(1)
            .factor("f", CostTier::Cheap, |t: &[f64]| {
                if t[0] < 0.0 {
                    f64::NEG_INFINITY
                } else if t[0] > 10.0 {
                    f64::NAN
                } else {
                    0.0
                }
            })
            .build()
            .unwrap();
        let f = target.factor(0);
        assert_eq!(f.log_ratio(&[1.0], &[-1.0]).unwrap(), f64::NEG_INFINITY);
        assert!(matches!(
            f.log_ratio(&[1.0], &[11.0]),
            Err(Error::NonFiniteFactor { .. })
        ));
        assert!(matches!(
            ChainPoint::new(&target, ParamVector::new(vec![-1.0])),
            Err(Error::InitialOutsideSupport)
        ));
    }

    #[test]
    fn cheap_count_counts_leading_block() {
        assert_eq!(two_factor().cheap_count(), 1);
    }
}
