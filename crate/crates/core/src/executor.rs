//! Worker pool for the expensive factor block at tour nodes.
//!
//! Each node is evaluated by exactly one worker and writes only its own slot;
//! results are collected into a map keyed by node index, so the outcome never
//! depends on worker count or completion order.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::error::{Error, Result};
use crate::prefetch::{NodeIndex, NodeTerms, Tour};
use crate::target::{FactorId, FactorizedTarget, ParamVector};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalTask {
    pub node: NodeIndex,
    pub theta: ParamVector,
}

impl EvalTask {
    pub fn from_tour(tour: &Tour) -> Vec<EvalTask> {
        tour.eval_nodes()
            .map(|n| EvalTask {
                node: n.index,
                theta: n.state_value.clone(),
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WorkerPoolConfig {
    pub workers: usize,
}

pub struct WorkerPool {
    workers: usize,
    pool: Option<ThreadPool>,
}

impl WorkerPool {
    pub fn new(config: WorkerPoolConfig) -> Result<Self> {
        if config.workers == 0 {
            return Err(Error::InvalidArgument("worker count must be >= 1".into()));
        }
        let pool = if config.workers > 1 {
            Some(
                ThreadPoolBuilder::new()
                    .num_threads(config.workers)
                    .thread_name(|i| format!("damh-worker-{i}"))
                    .build()
                    .map_err(|e| Error::Worker(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self {
            workers: config.workers,
            pool,
        })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Runs `eval` on every task, `workers` contiguous chunks at a time.
    pub fn evaluate<T, F>(&self, tasks: &[EvalTask], eval: F) -> Result<BTreeMap<NodeIndex, T>>
    where
        T: Send,
        F: Fn(&EvalTask) -> T + Sync,
    {
        let run = |task: &EvalTask| {
            catch_unwind(AssertUnwindSafe(|| eval(task)))
                .map_err(|p| Error::Worker(panic_message(&p, task.node)))
        };
        let mut slots: Vec<Option<Result<T>>> = (0..tasks.len()).map(|_| None).collect();
        match &self.pool {
            None => {
                for (slot, task) in slots.iter_mut().zip(tasks) {
                    *slot = Some(run(task));
                }
            }
            Some(pool) => {
                let chunk = tasks.len().div_ceil(self.workers).max(1);
                pool.scope(|s| {
                    for (slot_chunk, task_chunk) in slots.chunks_mut(chunk).zip(tasks.chunks(chunk)) {
                        let run = &run;
                        s.spawn(move |_| {
                            for (slot, task) in slot_chunk.iter_mut().zip(task_chunk) {
                                *slot = Some(run(task));
                            }
                        });
                    }
                });
            }
        }
        let mut out = BTreeMap::new();
        for (task, slot) in tasks.iter().zip(slots) {
            let value = slot.expect("every slot is filled")?;
            if out.insert(task.node, value).is_some() {
                return Err(Error::InconsistentCache(format!("node {} scheduled twice", task.node)));
            }
        }
        Ok(out)
    }
}

fn panic_message(payload: &Box<dyn std::any::Any + Send>, node: NodeIndex) -> String {
    let msg = payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into());
    format!("evaluation of node {node} panicked: {msg}")
}

/// Expensive-tier terms at `theta`, in `order`, stopping after the first
/// `-inf`. Values are stored raw; validation happens when a decision reads them.
pub fn expensive_terms(target: &FactorizedTarget, order: &[FactorId], theta: &[f64]) -> NodeTerms {
    let mut terms = vec![None; target.len()];
    for &id in order {
        if target.factor(id).cost() != crate::target::CostTier::Expensive {
            continue;
        }
        let v = target.factor(id).term(theta);
        terms[id] = Some(v);
        if v == f64::NEG_INFINITY {
            break;
        }
    }
    terms
}

/// Evaluates the expensive block at every tour node that needs a worker.
pub fn evaluate_tour(
    pool: &WorkerPool,
    tour: &Tour,
    target: &FactorizedTarget,
    order: &[FactorId],
) -> Result<BTreeMap<NodeIndex, NodeTerms>> {
    let tasks = EvalTask::from_tour(tour);
    pool.evaluate(&tasks, |task| expensive_terms(target, order, &task.theta))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeResult {
    /// Median over repetitions of the mean wall time per call.
    pub per_call: Duration,
    pub calls: usize,
}

/// Times `calls` invocations of `work`, repeated `reps` times; reports the
/// median of the per-repetition means.
pub fn wall_clock_probe(mut work: impl FnMut(), calls: usize, reps: usize) -> ProbeResult {
    let calls = calls.max(1);
    let mut means: Vec<f64> = (0..reps.max(1))
        .map(|_| {
            let start = Instant::now();
            for _ in 0..calls {
                work();
            }
            start.elapsed().as_secs_f64() / calls as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    ProbeResult {
        per_call: Duration::from_secs_f64(means[means.len() / 2]),
        calls,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::CostTier;
    use std::hint::black_box;

    fn tasks(n: usize) -> Vec<EvalTask> {
        (0..n)
            .map(|i| EvalTask {
                node: 2 * (i as u128) + 2,
                theta: ParamVector::new(vec![i as f64 * 0.37, -(i as f64)]),
            })
            .collect()
    }

    fn spin(theta: &[f64], ops: u64) -> f64 {
        let mut acc = theta[0];
        for i in 0..ops {
            acc = black_box(acc * 0.999_999 + (i as f64).sqrt() * 1e-9);
        }
        acc + theta[1]
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let ts = tasks(37);
        let reference = WorkerPool::new(WorkerPoolConfig { workers: 1 })
            .unwrap()
            .evaluate(&ts, |t| spin(&t.theta, 1000))
            .unwrap();
        for workers in [2, 3, 8] {
            let pool = WorkerPool::new(WorkerPoolConfig { workers }).unwrap();
            let got = pool.evaluate(&ts, |t| spin(&t.theta, 1000)).unwrap();
            assert_eq!(got.len(), reference.len());
            for (k, v) in &reference {
                assert_eq!(got[k].to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn panics_become_worker_errors() {
        let pool = WorkerPool::new(WorkerPoolConfig { workers: 2 }).unwrap();
        let err = pool
            .evaluate(&tasks(4), |t| {
                if t.node == 6 {
                    panic!("boom");
                }
                0.0
            })
            .unwrap_err();
        assert!(matches!(err, Error::Worker(ref m) if m.contains("boom")));
    }

    #[test]
    fn zero_workers_rejected() {
        assert!(WorkerPool::new(WorkerPoolConfig { workers: 0 }).is_err());
    }

    #[test]
    fn expensive_terms_stop_after_minus_infinity() {
        let target = FactorizedTarget::builder(1)
            .factor("c", CostTier::Cheap, |_: &[f64]| 0.0)
            .factor("e1", CostTier::Expensive, |_: &[f64]| f64::NEG_INFINITY)
            .factor("e2", CostTier::Expensive, |_: &[f64]| 1.0)
            .build()
            .unwrap();
        assert_eq!(
            expensive_terms(&target, &[0, 1, 2], &[0.0]),
            vec![None, Some(f64::NEG_INFINITY), None]
        );
        assert_eq!(
            expensive_terms(&target, &[0, 2, 1], &[0.0]),
            vec![None, Some(f64::NEG_INFINITY), Some(1.0)]
        );
    }

    /// Needs at least eight hardware threads.
    #[test]
    #[ignore = "requires >= 8 hardware threads"]
    fn eight_workers_scale() {
        let ts = tasks(8);
        let one = WorkerPool::new(WorkerPoolConfig { workers: 1 }).unwrap();
        let eight = WorkerPool::new(WorkerPoolConfig { workers: 8 }).unwrap();
        let serial = wall_clock_probe(|| drop(one.evaluate(&ts, |t| spin(&t.theta, 2_000_000))), 3, 5);
        let parallel = wall_clock_probe(|| drop(eight.evaluate(&ts, |t| spin(&t.theta, 2_000_000))), 3, 5);
        assert!(parallel.per_call.as_secs_f64() <= 0.35 * serial.per_call.as_secs_f64());
    }
}
