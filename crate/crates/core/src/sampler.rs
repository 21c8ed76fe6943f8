//! Chain driver: serial or prefetched, plain or delayed acceptance.
//!
//! Every configuration consumes the same committed randomness, so a run with
//! prefetching reproduces the serial path for the same seed exactly; only the
//! grouping of steps into rounds and the wall time differ.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::chain::{ChainTrace, IterMeta};
use crate::delayed::{da_decide, mh_decide, reorder_factors, FactorStats, OrderPolicy, StageRecord};
use crate::error::{Error, Result};
use crate::executor::{evaluate_tour, WorkerPool, WorkerPoolConfig};
use crate::kernel::{propose, ProposalKernel};
use crate::prefetch::{
    build_tour, build_tour_da, consume_tour, BranchPolicy, StepDecision, TourSpec, MAX_DEPTH,
};
use crate::schedule::RandomnessSchedule;
use crate::target::{ChainPoint, FactorId, FactorizedTarget, ParamVector};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Mh,
    #[default]
    Da,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mh" => Ok(Self::Mh),
            "da" => Ok(Self::Da),
            other => Err(Error::InvalidArgument(format!("unknown algorithm '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefetchConfig {
    pub workers: usize,
    pub policy: BranchPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub algorithm: Algorithm,
    pub prefetch: Option<PrefetchConfig>,
    pub burnin: u64,
    pub iterations: u64,
    pub thin: u64,
    pub order: OrderPolicy,
    /// Replace the proposal covariance with the scaled burn-in covariance.
    pub adapt: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Da,
            prefetch: None,
            burnin: 0,
            iterations: 1000,
            thin: 1,
            order: OrderPolicy::default(),
            adapt: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    /// Post-burn-in steps (before thinning).
    pub iterations: u64,
    pub accepted: u64,
    /// All steps, burn-in included.
    pub total_steps: u64,
    /// Prefetch rounds; a serial run counts one per step.
    pub rounds: u64,
    pub cheap_evals: u64,
    pub expensive_evals: u64,
    pub wall_seconds: f64,
    pub final_order: Vec<FactorId>,
    pub factor_stats: FactorStats,
}

impl RunStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.accepted as f64 / self.iterations as f64
        }
    }

    pub fn draws_per_round(&self) -> f64 {
        if self.rounds == 0 {
            0.0
        } else {
            self.total_steps as f64 / self.rounds as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: ChainTrace,
    pub stats: RunStats,
    pub final_state: ChainPoint,
    pub kernel: ProposalKernel,
}

/// A run that stopped early, with everything recorded before the failure.
#[derive(Debug, thiserror::Error)]
#[error("chain stopped after {} recorded draws: {error}", partial.len())]
pub struct RunFailure {
    #[source]
    pub error: Error,
    pub partial: ChainTrace,
    pub stats: RunStats,
}

pub struct Sampler<'a> {
    target: &'a FactorizedTarget,
    kernel: ProposalKernel,
    schedule: &'a RandomnessSchedule,
    config: SamplerConfig,
    pool: Option<WorkerPool>,
}

impl<'a> Sampler<'a> {
    pub fn new(
        target: &'a FactorizedTarget,
        kernel: ProposalKernel,
        schedule: &'a RandomnessSchedule,
        config: SamplerConfig,
    ) -> Result<Self> {
        let d = target.dimension();
        for (what, got) in [("kernel", kernel.dimension()), ("schedule", schedule.dimension())] {
            if got != d {
                return Err(Error::InvalidArgument(format!(
                    "{what} dimension {got} differs from target dimension {d}"
                )));
            }
        }
        if config.thin == 0 {
            return Err(Error::InvalidArgument("thin must be >= 1".into()));
        }
        if config.order.refresh_every == 0 {
            return Err(Error::InvalidArgument("refresh_every must be positive".into()));
        }
        let stages = match config.algorithm {
            Algorithm::Da => target.len(),
            Algorithm::Mh => 1,
        };
        if schedule.stages() < stages {
            return Err(Error::InvalidArgument(format!(
                "schedule provides {} stages, {stages} needed",
                schedule.stages()
            )));
        }
        let pool = match &config.prefetch {
            Some(p) => {
                if p.policy.kind.needs_surrogate() && target.surrogate().is_none() {
                    return Err(Error::InvalidArgument(format!(
                        "branch policy {:?} needs a target with a surrogate",
                        p.policy.kind
                    )));
                }
                Some(WorkerPool::new(WorkerPoolConfig { workers: p.workers })?)
            }
            None => None,
        };
        Ok(Self {
            target,
            kernel,
            schedule,
            config,
            pool,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn run(&self, init: ParamVector) -> std::result::Result<RunOutput, RunFailure> {
        let started = Instant::now();
        let mut run = Run::new(self);
        let outcome = ChainPoint::new(self.target, init).and_then(|point| run.drive(point));
        run.stats.wall_seconds = started.elapsed().as_secs_f64();
        run.stats.final_order = run.order.clone();
        run.stats.factor_stats = run.factor_stats.clone();
        match outcome {
            Ok(final_state) => Ok(RunOutput {
                trace: run.trace,
                stats: run.stats,
                final_state,
                kernel: run.kernel,
            }),
            Err(error) => Err(RunFailure {
                error,
                partial: run.trace,
                stats: run.stats,
            }),
        }
    }
}

struct Run<'s, 'a> {
    s: &'s Sampler<'a>,
    kernel: ProposalKernel,
    order: Vec<FactorId>,
    factor_stats: FactorStats,
    trace: ChainTrace,
    stats: RunStats,
    burn_states: Vec<ParamVector>,
    /// Decisions informative for the branch estimate, and how many accepted.
    observed: (u64, u64),
}

impl<'s, 'a> Run<'s, 'a> {
    fn new(s: &'s Sampler<'a>) -> Self {
        let d = s.target.len();
        let keep = s.config.iterations.div_ceil(s.config.thin) as usize;
        Self {
            s,
            kernel: s.kernel.clone(),
            order: (0..d).collect(),
            factor_stats: FactorStats::new(d),
            trace: ChainTrace::with_capacity(keep),
            stats: RunStats {
                iterations: 0,
                accepted: 0,
                total_steps: 0,
                rounds: 0,
                cheap_evals: 0,
                expensive_evals: 0,
                wall_seconds: 0.0,
                final_order: Vec::new(),
                factor_stats: FactorStats::new(d),
            },
            burn_states: Vec::new(),
            observed: (0, 0),
        }
    }

    fn drive(&mut self, mut current: ChainPoint) -> Result<ChainPoint> {
        let s = self.s;
        let cfg = &s.config;
        let end = cfg.burnin + cfg.iterations;
        let mut t = 0u64;
        while t < end {
            if cfg.order.refreshes_at(t) {
                self.factor_stats.set_last_values(&current.terms);
                self.order = reorder_factors(self.s.target, &cfg.order, &self.factor_stats)?;
            }
            if cfg.adapt && t == cfg.burnin && t > 0 {
                self.adapt_kernel();
            }
            match &cfg.prefetch {
                None => {
                    current = self.serial_step(current, t)?;
                    t += 1;
                }
                Some(p) => {
                    let mut horizon = (end - t).min(MAX_DEPTH as u64);
                    if let Some(b) = cfg.order.next_boundary(t) {
                        horizon = horizon.min(b - t);
                    }
                    if cfg.adapt && t < cfg.burnin {
                        horizon = horizon.min(cfg.burnin - t);
                    }
                    let (next, draws) = self.prefetch_round(current, t, horizon as u32, p)?;
                    current = next;
                    t += draws;
                }
            }
        }
        Ok(current)
    }

    fn serial_step(&mut self, current: ChainPoint, t: u64) -> Result<ChainPoint> {
        let target = self.s.target;
        let proposed = propose(&current.theta, &self.kernel, &self.s.schedule.innovation(t))?;
        let term_at = |id: FactorId| Some(target.factor(id).term(&proposed));
        let (accepted, stage, terms, records) = match self.s.config.algorithm {
            Algorithm::Da => {
                let out = da_decide(target, &self.order, &current.terms, term_at, t, self.s.schedule)?;
                (out.accepted, out.stages_evaluated, out.proposed_terms, Some(out.stages))
            }
            Algorithm::Mh => {
                let out = mh_decide(target, &current.terms, term_at, t, self.s.schedule)?;
                (out.accepted, out.factors_evaluated, out.proposed_terms, None)
            }
        };
        let cheap = target.cheap_count();
        self.stats.cheap_evals += stage.min(cheap) as u64;
        self.stats.expensive_evals += stage.saturating_sub(cheap) as u64;
        self.stats.rounds += 1;
        let next = match terms {
            Some(terms) => ChainPoint {
                theta: proposed,
                terms,
            },
            None => current,
        };
        self.record(t, &next.theta, accepted, stage, records.as_deref());
        Ok(next)
    }

    fn prefetch_round(
        &mut self,
        current: ChainPoint,
        t: u64,
        horizon: u32,
        p: &PrefetchConfig,
    ) -> Result<(ChainPoint, u64)> {
        let target = self.s.target;
        let mut policy = p.policy;
        policy.alpha_obs = self.alpha_obs(p.policy.alpha_obs);
        let spec = TourSpec {
            target,
            kernel: &self.kernel,
            schedule: self.s.schedule,
            order: &self.order,
            horizon,
        };
        let (tour, eval_order): (_, Vec<FactorId>) = match self.s.config.algorithm {
            Algorithm::Da => (build_tour_da(p.workers, &policy, &current, t, &spec)?, self.order.clone()),
            Algorithm::Mh => (build_tour(p.workers, &policy, &current, t, &spec)?, (0..target.len()).collect()),
        };
        self.stats.cheap_evals += (tour.nodes.len() * target.cheap_count()) as u64;
        let pool = self.s.pool.as_ref().expect("prefetch runs own a pool");
        let evals = evaluate_tour(pool, &tour, target, &eval_order)?;
        self.stats.expensive_evals += evals.values().flatten().filter(|v| v.is_some()).count() as u64;
        let walk = consume_tour(&tour, &evals, &current, &spec)?;
        self.stats.rounds += 1;
        for step in &walk.steps {
            let records = match &step.decision {
                StepDecision::Delayed(out) => Some(out.stages.as_slice()),
                StepDecision::Standard(_) => None,
            };
            self.record(step.t, &step.state, step.accepted, step.stage, records);
        }
        Ok((walk.end.clone(), walk.draws()))
    }

    fn alpha_obs(&self, prior: f64) -> f64 {
        let (n, acc) = self.observed;
        if n < 20 {
            prior
        } else {
            (acc as f64 / n as f64).clamp(0.01, 0.99)
        }
    }

    fn record(&mut self, t: u64, state: &ParamVector, accepted: bool, stage: usize, records: Option<&[StageRecord]>) {
        let cfg = &self.s.config;
        let cheap = self.s.target.cheap_count();
        if let Some(records) = records {
            for r in records {
                self.factor_stats.record(r.factor, r.passed);
            }
            if stage > cheap {
                self.observed.0 += 1;
                self.observed.1 += accepted as u64;
            }
        } else {
            self.observed.0 += 1;
            self.observed.1 += accepted as u64;
        }
        self.stats.total_steps += 1;
        if t >= cfg.burnin {
            self.stats.iterations += 1;
            self.stats.accepted += accepted as u64;
            if (t - cfg.burnin) % cfg.thin == 0 {
                let meta = IterMeta {
                    t,
                    accepted,
                    stage,
                    tour: self.stats.rounds - 1,
                };
                self.trace.push(state.clone(), meta);
            }
        } else if cfg.adapt {
            self.burn_states.push(state.clone());
        }
    }

    fn adapt_kernel(&mut self) {
        let d = self.s.target.dimension();
        let n = self.burn_states.len();
        if n < 2 * d + 2 {
            return;
        }
        let mut mean = vec![0.0; d];
        for s in &self.burn_states {
            for (m, x) in mean.iter_mut().zip(s.iter()) {
                *m += x / n as f64;
            }
        }
        let mut cov = vec![0.0; d * d];
        for s in &self.burn_states {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += (s[i] - mean[i]) * (s[j] - mean[j]) / (n - 1) as f64;
                }
            }
        }
        let scale = 2.38f64.powi(2) / d as f64;
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] *= scale;
            }
            cov[i * d + i] += 1e-10;
        }
        if let Ok(k) = ProposalKernel::random_walk(d, cov) {
            self.kernel = k;
        }
        self.burn_states = Vec::new();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delayed::OrderKind;
    use crate::prefetch::BranchKind;
    use crate::schedule::make_schedule;
    use crate::target::CostTier;

    fn split_gaussian() -> FactorizedTarget {
        FactorizedTarget::builder(2)
            .factor("prior", CostTier::Cheap, |t: &[f64]| -0.5 * (t[0] * t[0] + t[1] * t[1]) / 9.0)
            .factor("a", CostTier::Expensive, |t: &[f64]| -0.5 * (t[0] - 1.0).powi(2))
            .factor("b", CostTier::Expensive, |t: &[f64]| -0.5 * (t[1] + 0.5).powi(2) - 0.2 * t[0] * t[1])
            .surrogate(0, 1.0)
            .build()
            .unwrap()
    }

    fn run(cfg: SamplerConfig, seed: u64) -> RunOutput {
        let target = split_gaussian();
        let sched = make_schedule(seed, 2, target.len()).unwrap();
        let kernel = ProposalKernel::isotropic(2, 1.2).unwrap();
        Sampler::new(&target, kernel, &sched, cfg)
            .unwrap()
            .run(ParamVector::zeros(2))
            .unwrap()
    }

    #[test]
    fn prefetch_reproduces_serial_path_for_every_policy() {
        for algorithm in [Algorithm::Mh, Algorithm::Da] {
            let base = SamplerConfig {
                algorithm,
                iterations: 3000,
                burnin: 100,
                thin: 3,
                order: OrderPolicy::new(OrderKind::BySuccessRate, 50).unwrap(),
                ..Default::default()
            };
            let serial = run(base.clone(), 11);
            for kind in [
                BranchKind::StaticHalf,
                BranchKind::ObservedRate,
                BranchKind::UniformAware,
                BranchKind::ApproxRatio,
                BranchKind::CappedApprox,
            ] {
                for workers in [1, 3, 8] {
                    let cfg = SamplerConfig {
                        prefetch: Some(PrefetchConfig {
                            workers,
                            policy: BranchPolicy::of_kind(kind, 0.9),
                        }),
                        ..base.clone()
                    };
                    let out = run(cfg, 11);
                    assert!(
                        out.trace.same_path(&serial.trace),
                        "{algorithm:?} {kind:?} workers={workers}"
                    );
                    assert_eq!(out.stats.final_order, serial.stats.final_order);
                }
            }
        }
    }

    #[test]
    fn thinning_and_burnin_bookkeeping() {
        let out = run(
            SamplerConfig {
                iterations: 1000,
                burnin: 250,
                thin: 7,
                ..Default::default()
            },
            3,
        );
        assert_eq!(out.stats.iterations, 1000);
        assert_eq!(out.trace.len(), 1000usize.div_ceil(7));
        assert_eq!(out.trace.meta[0].t, 250);
        assert_eq!(out.trace.meta[1].t, 257);
    }

    #[test]
    fn adaptation_matches_between_serial_and_prefetch() {
        let base = SamplerConfig {
            iterations: 500,
            burnin: 300,
            adapt: true,
            ..Default::default()
        };
        let serial = run(base.clone(), 5);
        let pre = run(
            SamplerConfig {
                prefetch: Some(PrefetchConfig {
                    workers: 4,
                    policy: BranchPolicy::static_half(),
                }),
                ..base
            },
            5,
        );
        assert!(pre.trace.same_path(&serial.trace));
        assert_eq!(pre.kernel.covariance(), serial.kernel.covariance());
        assert_ne!(serial.kernel.covariance()[0], 1.44);
    }

    #[test]
    fn surrogate_policies_need_a_surrogate() {
        let target = FactorizedTarget::builder(1)
            .factor("c", CostTier::Cheap, |_: &[f64]| 0.0)
            .build()
            .unwrap();
        let sched = make_schedule(1, 1, 1).unwrap();
        let cfg = SamplerConfig {
            prefetch: Some(PrefetchConfig {
                workers: 2,
                policy: BranchPolicy::of_kind(BranchKind::ApproxRatio, 1.0),
            }),
            ..Default::default()
        };
        let kernel = ProposalKernel::isotropic(1, 1.0).unwrap();
        assert!(Sampler::new(&target, kernel, &sched, cfg).is_err());
    }

    #[test]
    fn failure_keeps_partial_trace() {
        let target = FactorizedTarget::builder(1)
            .factor("trap", CostTier::Cheap, |t: &[f64]| if t[0] > 3.0 { f64::NAN } else { 0.0 })
            .build()
            .unwrap();
        let sched = make_schedule(2, 1, 1).unwrap();
        let kernel = ProposalKernel::isotropic(1, 1.0).unwrap();
        let cfg = SamplerConfig {
            iterations: 100_000,
            ..Default::default()
        };
        let err = Sampler::new(&target, kernel, &sched, cfg)
            .unwrap()
            .run(ParamVector::new(vec![0.0]))
            .unwrap_err();
        assert!(matches!(err.error, Error::NonFiniteFactor { .. }));
        assert!(!err.partial.is_empty());
        assert!(err.partial.len() < 100_000);
    }

    #[test]
    fn draws_per_round_exceed_one_with_workers() {
        let out = run(
            SamplerConfig {
                iterations: 2000,
                prefetch: Some(PrefetchConfig {
                    workers: 8,
                    policy: BranchPolicy::observed(0.3),
                }),
                ..Default::default()
            },
            9,
        );
        assert!(out.stats.draws_per_round() > 1.5);
    }
}
