//! Sequential per-factor acceptance.
//!
//! Stage `k` of iteration `t` compares the committed uniform `u(t, k)` with
//! `min(rho_k, 1)` and the first failure rejects the proposal without touching
//! the remaining factors. The overall acceptance probability is
//! `prod_k min(rho_k, 1)`, which keeps the target stationary (see [`exact`]
//! for the brute-force check on small state spaces).

pub mod exact;
pub mod ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::RandomnessSchedule;
use crate::target::{log_ratio_from_terms, ChainPoint, FactorId, FactorizedTarget};

pub use exact::{exact_da_kernel, plain_mh_kernel, DiscreteSplit};
pub use ordering::{reorder_factors, FactorStats, OrderKind, OrderPolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub factor: FactorId,
    pub log_ratio: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DaOutcome {
    pub accepted: bool,
    /// Number of stages whose factor was computed, in `[1, d]`.
    pub stages_evaluated: usize,
    pub stages: Vec<StageRecord>,
    /// Terms at the proposal in id order; present only when accepted.
    pub proposed_terms: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MhOutcome {
    pub accepted: bool,
    pub factors_evaluated: usize,
    pub log_ratio: f64,
    pub proposed_terms: Option<Vec<f64>>,
}

/// `u < min(rho, 1)` evaluated as `ln u < log rho`.
#[inline]
pub fn stage_passes(u: f64, log_rho: f64) -> bool {
    u.ln() < log_rho
}

pub fn combined_acceptance_prob(rho_values: &[f64]) -> Result<f64> {
    if let Some(bad) = rho_values.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "acceptance factors must be positive, got {bad}"
        )));
    }
    Ok(rho_values.iter().map(|r| r.min(1.0)).product())
}

fn check_order(target: &FactorizedTarget, order: &[FactorId]) -> Result<()> {
    let n = target.len();
    if order.len() != n {
        return Err(Error::FactorOrder(format!(
            "ordering has {} entries for {n} factors",
            order.len()
        )));
    }
    let mut seen = vec![false; n];
    for &id in order {
        if id >= n || std::mem::replace(&mut seen[id], true) {
            return Err(Error::FactorOrder(format!("not a permutation: {order:?}")));
        }
    }
    Ok(())
}

/// Core stage loop shared by the serial sampler and tour consumption.
///
/// `term_at` yields the raw proposal term of a factor, or `None` when a
/// prefetched cache lacks it (which is an inconsistency if the stage is reached).
pub(crate) fn da_decide(
    target: &FactorizedTarget,
    order: &[FactorId],
    current_terms: &[f64],
    mut term_at: impl FnMut(FactorId) -> Option<f64>,
    t: u64,
    schedule: &RandomnessSchedule,
) -> Result<DaOutcome> {
    let mut stages = Vec::with_capacity(order.len());
    let mut proposed = vec![0.0; target.len()];
    for (pos, &id) in order.iter().enumerate() {
        let factor = target.factor(id);
        let raw = term_at(id).ok_or_else(|| {
            Error::InconsistentCache(format!("term of factor {id} missing at stage {}", pos + 1))
        })?;
        let prop = factor.checked(raw)?;
        let log_rho = log_ratio_from_terms(current_terms[id], prop);
        let passed = stage_passes(schedule.uniform(t, pos + 1), log_rho);
        stages.push(StageRecord {
            factor: id,
            log_ratio: log_rho,
            passed,
        });
        if !passed {
            return Ok(DaOutcome {
                accepted: false,
                stages_evaluated: pos + 1,
                stages,
                proposed_terms: None,
            });
        }
        proposed[id] = prop;
    }
    Ok(DaOutcome {
        accepted: true,
        stages_evaluated: order.len(),
        stages,
        proposed_terms: Some(proposed),
    })
}

/// Plain MH decision over the summed ratio, factors visited in id order.
pub(crate) fn mh_decide(
    target: &FactorizedTarget,
    current_terms: &[f64],
    mut term_at: impl FnMut(FactorId) -> Option<f64>,
    t: u64,
    schedule: &RandomnessSchedule,
) -> Result<MhOutcome> {
    let mut total = 0.0;
    let mut proposed = Vec::with_capacity(target.len());
    for factor in target.factors() {
        let id = factor.id();
        let raw = term_at(id).ok_or_else(|| {
            Error::InconsistentCache(format!("term of factor {id} missing"))
        })?;
        let prop = factor.checked(raw)?;
        total += log_ratio_from_terms(current_terms[id], prop);
        proposed.push(prop);
        if total == f64::NEG_INFINITY {
            return Ok(MhOutcome {
                accepted: false,
                factors_evaluated: id + 1,
                log_ratio: total,
                proposed_terms: None,
            });
        }
    }
    let accepted = stage_passes(schedule.uniform(t, 1), total);
    Ok(MhOutcome {
        accepted,
        factors_evaluated: target.len(),
        log_ratio: total,
        proposed_terms: accepted.then_some(proposed),
    })
}

/// Delayed-acceptance test of `proposed` against `current` at time `t`,
/// visiting factors in `order`.
pub fn delayed_accept(
    target: &FactorizedTarget,
    order: &[FactorId],
    current: &ChainPoint,
    proposed: &[f64],
    t: u64,
    schedule: &RandomnessSchedule,
) -> Result<DaOutcome> {
    check_order(target, order)?;
    target.check_dimension(proposed)?;
    if order.len() > schedule.stages() {
        return Err(Error::InvalidArgument(format!(
            "{} stages exceed schedule capacity {}",
            order.len(),
            schedule.stages()
        )));
    }
    da_decide(
        target,
        order,
        &current.terms,
        |id| Some(target.factor(id).term(proposed)),
        t,
        schedule,
    )
}
