//! Speculative tour construction over the binary accept/reject tree.
//!
//! Nodes use heap indexing: the root (current state) is 0 and the children of
//! node `i` are `2i + 1` (the step from `i` was rejected) and `2i + 2` (it was
//! accepted). A rejection node shares its parent's state, so only acceptance
//! nodes carry a fresh proposal. The proposal deciding the step out of node
//! `i` is therefore node `2i + 2`, and a tour is a set of such proposal nodes.
//!
//! Selecting proposal `j = 2i + 2` exposes two follow-up proposals: `2j`
//! (made from `j - 1`, i.e. after `j` is rejected) and `2j + 2` (made from `j`
//! after it is accepted), with reach probabilities `gamma_j (1 - alpha_j)` and
//! `gamma_j alpha_j`. The greedy builder repeatedly takes the candidate with
//! the highest reach probability until every worker has a node.
//!
//! With delayed acceptance the cheap stages are checked during construction.
//! A proposal that fails them is rejected for certain: it takes no worker and
//! the builder immediately moves on to the proposal after the rejection.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::delayed::{da_decide, mh_decide, stage_passes, DaOutcome, MhOutcome};
use crate::error::{Error, Result};
use crate::kernel::{propose, ProposalKernel};
use crate::schedule::RandomnessSchedule;
use crate::target::{log_ratio_from_terms, ChainPoint, FactorId, FactorizedTarget, ParamVector};

pub type NodeIndex = u128;

/// Deepest tree level a tour may reach; keeps heap indices inside `u128`.
pub const MAX_DEPTH: u32 = 64;

pub fn node_depth(index: NodeIndex) -> u32 {
    (index + 1).ilog2()
}

pub fn is_rejection_node(index: NodeIndex) -> bool {
    index % 2 == 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Accept,
    Reject,
}

pub fn child_gamma(parent_gamma: f64, alpha: f64, branch: Branch) -> f64 {
    match branch {
        Branch::Accept => parent_gamma * alpha,
        Branch::Reject => parent_gamma * (1.0 - alpha),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchKind {
    StaticHalf,
    ObservedRate,
    UniformAware,
    ApproxRatio,
    CappedApprox,
}

impl BranchKind {
    pub fn needs_surrogate(self) -> bool {
        matches!(self, Self::ApproxRatio | Self::CappedApprox)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchPolicy {
    pub kind: BranchKind,
    pub alpha_obs: f64,
    pub beta_cap: f64,
}

impl BranchPolicy {
    pub fn static_half() -> Self {
        Self {
            kind: BranchKind::StaticHalf,
            alpha_obs: 0.5,
            beta_cap: 1.0,
        }
    }

    pub fn observed(alpha_obs: f64) -> Self {
        Self {
            kind: BranchKind::ObservedRate,
            alpha_obs,
            beta_cap: 1.0,
        }
    }

    pub fn of_kind(kind: BranchKind, beta_cap: f64) -> Self {
        Self {
            kind,
            alpha_obs: 0.5,
            beta_cap,
        }
    }
}

/// What the builder knows about a proposal when estimating its acceptance.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AlphaContext {
    /// Committed uniform of the first undecided stage.
    pub u: Option<f64>,
    /// Cheap estimate of the undecided part of the acceptance ratio.
    pub rho_hat: Option<f64>,
}

pub fn estimate_alpha(policy: &BranchPolicy, ctx: &AlphaContext) -> Result<f64> {
    let alpha = match policy.kind {
        BranchKind::StaticHalf => 0.5,
        BranchKind::ObservedRate => policy.alpha_obs,
        // Heuristic: a ratio whose quantile is uniform clears u with probability 1 - u.
        BranchKind::UniformAware => 1.0 - ctx.u.ok_or(Error::MissingContext("uniform-aware"))?,
        BranchKind::ApproxRatio => {
            let u = ctx.u.ok_or(Error::MissingContext("approx-ratio"))?;
            let rho = ctx.rho_hat.ok_or(Error::MissingContext("approx-ratio"))?;
            if u < rho {
                1.0
            } else {
                0.0
            }
        }
        BranchKind::CappedApprox => {
            let rho = ctx.rho_hat.ok_or(Error::MissingContext("capped-approx"))?;
            rho.min(policy.beta_cap)
        }
    };
    Ok(if alpha.is_nan() { 0.5 } else { alpha.clamp(0.0, 1.0) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TourMode {
    /// Full ratio against one uniform; workers evaluate the whole expensive block.
    Standard,
    /// Cheap stages pruned during construction.
    Delayed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheapStatus {
    Passed,
    /// Certain rejection found without any expensive work.
    Rejected,
    /// A cheap term was non-finite; the walk surfaces the error if it reaches this node.
    Invalid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrefetchNode {
    pub index: NodeIndex,
    pub depth: u32,
    pub gamma: f64,
    pub state_value: ParamVector,
    pub needs_eval: bool,
    pub cheap_status: CheapStatus,
    /// Raw cheap-tier terms at the proposal, indexed by factor id.
    pub cheap_terms: Vec<f64>,
    /// Time index of the step this proposal decides.
    pub t: u64,
}

#[derive(Clone, Debug)]
pub struct Tour {
    pub capacity: usize,
    pub mode: TourMode,
    pub t0: u64,
    pub horizon: u32,
    pub nodes: Vec<PrefetchNode>,
    lookup: HashMap<NodeIndex, usize>,
}

impl Tour {
    pub fn get(&self, index: NodeIndex) -> Option<&PrefetchNode> {
        self.lookup.get(&index).map(|&i| &self.nodes[i])
    }

    pub fn indices(&self) -> Vec<NodeIndex> {
        self.nodes.iter().map(|n| n.index).collect()
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.gamma).collect()
    }

    /// Nodes that need a worker.
    pub fn eval_nodes(&self) -> impl Iterator<Item = &PrefetchNode> {
        self.nodes.iter().filter(|n| n.needs_eval)
    }

    pub fn eval_count(&self) -> usize {
        self.eval_nodes().count()
    }

    pub fn max_depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }
}

/// Everything the builder and the walk share besides the root and policy.
#[derive(Clone, Copy)]
pub struct TourSpec<'a> {
    pub target: &'a FactorizedTarget,
    pub kernel: &'a ProposalKernel,
    pub schedule: &'a RandomnessSchedule,
    /// Stage order in effect for the whole tour.
    pub order: &'a [FactorId],
    /// Maximum depth (number of steps) the tour may cover.
    pub horizon: u32,
}

struct Base {
    theta: ParamVector,
    cheap_terms: Vec<f64>,
}

struct Candidate {
    index: NodeIndex,
    depth: u32,
    gamma: f64,
    base: Rc<Base>,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    // Max-heap: higher gamma wins, then the shallower node, then the smaller index.
    fn cmp(&self, other: &Self) -> Ordering {
        self.gamma
            .total_cmp(&other.gamma)
            .then_with(|| other.depth.cmp(&self.depth))
            .then_with(|| other.index.cmp(&self.index))
    }
}

struct Builder<'a> {
    spec: TourSpec<'a>,
    policy: &'a BranchPolicy,
    mode: TourMode,
    t0: u64,
    cheap: usize,
    innovations: Vec<Option<Vec<f64>>>,
}

impl Builder<'_> {
    fn innovation(&mut self, depth: u32) -> &[f64] {
        let slot = depth as usize - 1;
        if self.innovations[slot].is_none() {
            self.innovations[slot] = Some(self.spec.schedule.innovation(self.t0 + slot as u64));
        }
        self.innovations[slot].as_deref().unwrap()
    }

    /// Proposal, cheap terms and cheap verdict for the candidate.
    fn expand(&mut self, c: &Candidate) -> Result<PrefetchNode> {
        let t = self.t0 + c.depth as u64 - 1;
        let innov = self.innovation(c.depth).to_vec();
        let theta = propose(&c.base.theta, self.spec.kernel, &innov)?;
        let target = self.spec.target;
        let cheap_terms: Vec<f64> = target.factors()[..self.cheap]
            .iter()
            .map(|f| f.term(&theta))
            .collect();
        let status = match self.mode {
            TourMode::Delayed => {
                let mut status = CheapStatus::Passed;
                for (pos, &id) in self.spec.order[..self.cheap].iter().enumerate() {
                    let Ok(prop) = target.factor(id).checked(cheap_terms[id]) else {
                        status = CheapStatus::Invalid;
                        break;
                    };
                    let log_rho = log_ratio_from_terms(c.base.cheap_terms[id], prop);
                    if !stage_passes(self.spec.schedule.uniform(t, pos + 1), log_rho) {
                        status = CheapStatus::Rejected;
                        break;
                    }
                }
                status
            }
            TourMode::Standard => {
                let mut status = CheapStatus::Passed;
                for (id, &raw) in cheap_terms.iter().enumerate() {
                    match target.factor(id).checked(raw) {
                        Err(_) => {
                            status = CheapStatus::Invalid;
                            break;
                        }
                        Ok(v) if v == f64::NEG_INFINITY => {
                            status = CheapStatus::Rejected;
                            break;
                        }
                        Ok(_) => {}
                    }
                }
                status
            }
        };
        Ok(PrefetchNode {
            index: c.index,
            depth: c.depth,
            gamma: c.gamma,
            state_value: theta,
            needs_eval: status == CheapStatus::Passed,
            cheap_status: status,
            cheap_terms,
            t,
        })
    }

    fn alpha(&self, node: &PrefetchNode, base: &Base) -> Result<f64> {
        let target = self.spec.target;
        let d = target.len();
        let surrogate_log = || -> Option<f64> {
            target.surrogate().map(|s| {
                s.scale * log_ratio_from_terms(base.cheap_terms[s.source], node.cheap_terms[s.source])
            })
        };
        let ctx = match self.mode {
            TourMode::Delayed => {
                if self.cheap == d {
                    // Nothing left to decide once the cheap stages pass.
                    return Ok(1.0);
                }
                AlphaContext {
                    u: Some(self.spec.schedule.uniform(node.t, self.cheap + 1)),
                    rho_hat: surrogate_log().map(f64::exp),
                }
            }
            TourMode::Standard => {
                let cheap_log: f64 = (0..self.cheap)
                    .map(|id| log_ratio_from_terms(base.cheap_terms[id], node.cheap_terms[id]))
                    .sum();
                AlphaContext {
                    u: Some(self.spec.schedule.uniform(node.t, 1)),
                    rho_hat: surrogate_log().map(|s| (cheap_log + s).exp()),
                }
            }
        };
        estimate_alpha(self.policy, &ctx)
    }
}

fn construct(
    capacity: usize,
    policy: &BranchPolicy,
    root: &ChainPoint,
    t0: u64,
    spec: &TourSpec,
    mode: TourMode,
) -> Result<Tour> {
    if capacity == 0 {
        return Err(Error::InvalidArgument("tour capacity must be >= 1".into()));
    }
    let horizon = spec.horizon.min(MAX_DEPTH);
    if horizon == 0 {
        return Err(Error::InvalidArgument("tour horizon must be >= 1".into()));
    }
    let target = spec.target;
    target.check_dimension(&root.theta)?;
    if spec.order.len() != target.len() {
        return Err(Error::FactorOrder("stage order does not cover the target".into()));
    }
    let stages_needed = match mode {
        TourMode::Delayed => target.len(),
        TourMode::Standard => 1,
    };
    if stages_needed > spec.schedule.stages() {
        return Err(Error::InvalidArgument("schedule has too few stages for this target".into()));
    }
    let cheap = target.cheap_count();
    let mut b = Builder {
        spec: *spec,
        policy,
        mode,
        t0,
        cheap,
        innovations: vec![None; horizon as usize],
    };

    let mut nodes: Vec<PrefetchNode> = Vec::new();
    let mut heap = BinaryHeap::new();
    let mut workers = 0usize;
    let mut next = Some(Candidate {
        index: 2,
        depth: 1,
        gamma: 1.0,
        base: Rc::new(Base {
            theta: root.theta.clone(),
            cheap_terms: root.terms[..cheap].to_vec(),
        }),
    });

    while let Some(mut cand) = next.take() {
        // Follow certain rejections down the tree without spending workers.
        loop {
            let node = b.expand(&cand)?;
            match node.cheap_status {
                CheapStatus::Rejected if cand.depth < horizon => {
                    let follow = Candidate {
                        index: 2 * cand.index,
                        depth: cand.depth + 1,
                        gamma: cand.gamma,
                        base: cand.base.clone(),
                    };
                    nodes.push(node);
                    cand = follow;
                }
                CheapStatus::Passed => {
                    workers += 1;
                    if cand.depth < horizon {
                        let alpha = b.alpha(&node, &cand.base)?;
                        let accept_base = Rc::new(Base {
                            theta: node.state_value.clone(),
                            cheap_terms: node.cheap_terms.clone(),
                        });
                        let children = [
                            (2 * cand.index, child_gamma(cand.gamma, alpha, Branch::Reject), cand.base.clone()),
                            (2 * cand.index + 2, child_gamma(cand.gamma, alpha, Branch::Accept), accept_base),
                        ];
                        for (index, gamma, base) in children {
                            if gamma > 0.0 {
                                heap.push(Candidate {
                                    index,
                                    depth: cand.depth + 1,
                                    gamma,
                                    base,
                                });
                            }
                        }
                    }
                    nodes.push(node);
                    break;
                }
                _ => {
                    nodes.push(node);
                    break;
                }
            }
        }
        if workers < capacity {
            next = heap.pop();
        }
    }

    let lookup = nodes.iter().enumerate().map(|(i, n)| (n.index, i)).collect();
    Ok(Tour {
        capacity,
        mode,
        t0,
        horizon,
        nodes,
        lookup,
    })
}

/// Greedy tour for the plain Metropolis-Hastings chain.
pub fn build_tour(
    capacity: usize,
    policy: &BranchPolicy,
    root: &ChainPoint,
    t0: u64,
    spec: &TourSpec,
) -> Result<Tour> {
    construct(capacity, policy, root, t0, spec, TourMode::Standard)
}

/// Greedy tour with cheap-stage pruning for the delayed-acceptance chain.
pub fn build_tour_da(
    capacity: usize,
    policy: &BranchPolicy,
    root: &ChainPoint,
    t0: u64,
    spec: &TourSpec,
) -> Result<Tour> {
    construct(capacity, policy, root, t0, spec, TourMode::Delayed)
}

/// Expensive-block terms at one node, indexed by factor id (`None` = not computed).
pub type NodeTerms = Vec<Option<f64>>;

#[derive(Clone, Debug, PartialEq)]
pub enum StepDecision {
    Standard(MhOutcome),
    Delayed(DaOutcome),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TourStep {
    pub t: u64,
    pub state: ParamVector,
    pub accepted: bool,
    pub stage: usize,
    pub decision: StepDecision,
}

#[derive(Clone, Debug)]
pub struct TourWalk {
    pub steps: Vec<TourStep>,
    pub end: ChainPoint,
}

impl TourWalk {
    pub fn draws(&self) -> u64 {
        self.steps.len() as u64
    }

    pub fn states(&self) -> Vec<ParamVector> {
        self.steps.iter().map(|s| s.state.clone()).collect()
    }
}

/// Walks the realized accept/reject path through the tour with the committed
/// uniforms, stopping at the first proposal the tour does not cover.
pub fn consume_tour(
    tour: &Tour,
    evaluations: &BTreeMap<NodeIndex, NodeTerms>,
    root: &ChainPoint,
    spec: &TourSpec,
) -> Result<TourWalk> {
    for &index in evaluations.keys() {
        if is_rejection_node(index) {
            return Err(Error::InconsistentCache(format!(
                "rejection node {index} carries its own value"
            )));
        }
        match tour.get(index) {
            Some(n) if n.needs_eval => {}
            _ => {
                return Err(Error::InconsistentCache(format!(
                    "evaluation for node {index} which the tour did not schedule"
                )))
            }
        }
    }
    let target = spec.target;
    let cheap = target.cheap_count();
    let mut current = root.clone();
    let mut decision_node: NodeIndex = 0;
    let mut steps = Vec::new();
    loop {
        let proposal = 2 * decision_node + 2;
        let Some(node) = tour.get(proposal) else { break };
        let evaluated = evaluations.get(&proposal);
        if node.needs_eval && evaluated.is_none() {
            break;
        }
        let term_at = |id: FactorId| -> Option<f64> {
            if id < cheap {
                Some(node.cheap_terms[id])
            } else {
                evaluated.and_then(|terms| terms[id])
            }
        };
        let (accepted, stage, terms, decision) = match tour.mode {
            TourMode::Delayed => {
                let out = da_decide(target, spec.order, &current.terms, term_at, node.t, spec.schedule)?;
                (out.accepted, out.stages_evaluated, out.proposed_terms.clone(), StepDecision::Delayed(out))
            }
            TourMode::Standard => {
                let out = mh_decide(target, &current.terms, term_at, node.t, spec.schedule)?;
                (out.accepted, out.factors_evaluated, out.proposed_terms.clone(), StepDecision::Standard(out))
            }
        };
        if let Some(terms) = terms {
            current = ChainPoint {
                theta: node.state_value.clone(),
                terms,
            };
            decision_node = proposal;
        } else {
            decision_node = proposal - 1;
        }
        steps.push(TourStep {
            t: node.t,
            state: current.theta.clone(),
            accepted,
            stage,
            decision,
        });
    }
    Ok(TourWalk { steps, end: current })
}
