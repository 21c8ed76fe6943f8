//! Factor ordering policies.
//!
//! Reordering never changes the acceptance probability, only how soon a
//! rejection is found. Orderings are recomputed on the chain thread at
//! iteration boundaries and always keep the cheap tier ahead of the expensive one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::target::{CostTier, FactorId, FactorizedTarget};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderKind {
    #[default]
    Fixed,
    /// Ascending empirical pass rate: least successful factors first.
    BySuccessRate,
    /// Descending last stored term: highest likelihood contributions first.
    ByLastValue,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderPolicy {
    pub kind: OrderKind,
    pub refresh_every: u64,
}

impl Default for OrderPolicy {
    fn default() -> Self {
        Self {
            kind: OrderKind::Fixed,
            refresh_every: 100,
        }
    }
}

impl OrderPolicy {
    pub fn new(kind: OrderKind, refresh_every: u64) -> Result<Self> {
        if refresh_every == 0 {
            return Err(Error::InvalidArgument("refresh_every must be positive".into()));
        }
        Ok(Self { kind, refresh_every })
    }

    /// Whether the ordering is refreshed before iteration `t`.
    pub fn refreshes_at(&self, t: u64) -> bool {
        self.kind != OrderKind::Fixed && t > 0 && t % self.refresh_every == 0
    }

    /// First refresh boundary strictly after `t`, if the policy ever refreshes.
    pub fn next_boundary(&self, t: u64) -> Option<u64> {
        (self.kind != OrderKind::Fixed).then(|| (t / self.refresh_every + 1) * self.refresh_every)
    }
}

/// Per-factor statistics, updated on the chain thread only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorStats {
    pub attempts: Vec<u64>,
    pub passes: Vec<u64>,
    pub last_values: Vec<f64>,
}

impl FactorStats {
    pub fn new(factors: usize) -> Self {
        Self {
            attempts: vec![0; factors],
            passes: vec![0; factors],
            last_values: vec![0.0; factors],
        }
    }

    pub fn len(&self) -> usize {
        self.attempts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attempts.is_empty()
    }

    pub fn record(&mut self, id: FactorId, passed: bool) {
        self.attempts[id] += 1;
        if passed {
            self.passes[id] += 1;
        }
    }

    pub fn set_last_values(&mut self, terms: &[f64]) {
        self.last_values.copy_from_slice(terms);
    }

    /// Empirical pass rate; an untested factor counts as always passing.
    pub fn pass_rate(&self, id: FactorId) -> f64 {
        match self.attempts[id] {
            0 => 1.0,
            n => self.passes[id] as f64 / n as f64,
        }
    }
}

/// Permutation of factor ids under `policy`, sorted within each cost tier.
pub fn reorder_factors(
    target: &FactorizedTarget,
    policy: &OrderPolicy,
    stats: &FactorStats,
) -> Result<Vec<FactorId>> {
    if stats.len() != target.len() {
        return Err(Error::InvalidArgument(format!(
            "stats cover {} factors, target has {}",
            stats.len(),
            target.len()
        )));
    }
    let mut order = Vec::with_capacity(target.len());
    for tier in [CostTier::Cheap, CostTier::Expensive] {
        let mut ids: Vec<FactorId> = target.ids_with_cost(tier).collect();
        match policy.kind {
            OrderKind::Fixed => {}
            OrderKind::BySuccessRate => {
                ids.sort_by(|&a, &b| stats.pass_rate(a).total_cmp(&stats.pass_rate(b)));
            }
            OrderKind::ByLastValue => {
                ids.sort_by(|&a, &b| stats.last_values[b].total_cmp(&stats.last_values[a]));
            }
        }
        order.extend(ids);
    }
    Ok(order)
}
