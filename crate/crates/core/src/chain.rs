use serde::{Deserialize, Serialize};

use crate::delayed::mh_decide;
use crate::error::Result;
use crate::kernel::{propose, ProposalKernel};
use crate::schedule::RandomnessSchedule;
use crate::target::{ChainPoint, FactorizedTarget, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterMeta {
    /// Absolute iteration index (burn-in included).
    pub t: u64,
    pub accepted: bool,
    /// Deepest factor stage evaluated during the decision.
    pub stage: usize,
    /// Prefetch round that produced the step; serial runs use one round per step.
    pub tour: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub states: Vec<ParamVector>,
    pub meta: Vec<IterMeta>,
}

impl ChainTrace {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            states: Vec::with_capacity(n),
            meta: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn push(&mut self, state: ParamVector, meta: IterMeta) {
        self.states.push(state);
        self.meta.push(meta);
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.meta.is_empty() {
            return 0.0;
        }
        self.meta.iter().filter(|m| m.accepted).count() as f64 / self.meta.len() as f64
    }

    /// Coordinate `j` of every state.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[j]).collect()
    }

    /// Same states and decisions, bit for bit, ignoring how steps were grouped into rounds.
    pub fn same_path(&self, other: &ChainTrace) -> bool {
        self.len() == other.len()
            && self.states.iter().zip(&other.states).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
            && self
                .meta
                .iter()
                .zip(&other.meta)
                .all(|(a, b)| a.t == b.t && a.accepted == b.accepted && a.stage == b.stage)
    }
}

/// One plain Metropolis-Hastings transition at time `t`: accept iff
/// `u(t, 1) < exp(sum_k log rho_k)`.
pub fn standard_mh_step(
    state: &ChainPoint,
    target: &FactorizedTarget,
    kernel: &ProposalKernel,
    t: u64,
    schedule: &RandomnessSchedule,
) -> Result<(ChainPoint, bool)> {
    let proposed = propose(&state.theta, kernel, &schedule.innovation(t))?;
    let out = mh_decide(
        target,
        &state.terms,
        |id| Some(target.factor(id).term(&proposed)),
        t,
        schedule,
    )?;
    Ok(match out.proposed_terms {
        Some(terms) => (
            ChainPoint {
                theta: proposed,
                terms,
            },
            true,
        ),
        None => (state.clone(), false),
    })
}
