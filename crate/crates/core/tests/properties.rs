use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use proptest::prelude::*;

use damh::chain::standard_mh_step;
use damh::delayed::{
    combined_acceptance_prob, delayed_accept, exact_da_kernel, reorder_factors, DiscreteSplit, FactorStats,
    OrderKind, OrderPolicy,
};
use damh::executor::{evaluate_tour, WorkerPool, WorkerPoolConfig};
use damh::kernel::{propose, ProposalKernel};
use damh::prefetch::{build_tour, consume_tour, BranchKind, BranchPolicy, NodeIndex, TourSpec};
use damh::sampler::{Algorithm, PrefetchConfig, Sampler, SamplerConfig};
use damh::schedule::make_schedule;
use damh::target::{ChainPoint, CostTier, FactorizedTarget, LogTerm, ParamVector};

fn split_target() -> FactorizedTarget {
    FactorizedTarget::builder(2)
        .factor("prior", CostTier::Cheap, |t: &[f64]| -0.5 * (t[0] * t[0] + t[1] * t[1]) / 4.0)
        .factor("lik-a", CostTier::Expensive, |t: &[f64]| -0.5 * (t[0] - 1.0).powi(2))
        .factor("lik-b", CostTier::Expensive, |t: &[f64]| -0.5 * (t[0] + t[1]).powi(2) / 0.5)
        .surrogate(0, 1.0)
        .build()
        .unwrap()
}

fn policy_kind(i: usize) -> BranchKind {
    [
        BranchKind::StaticHalf,
        BranchKind::ObservedRate,
        BranchKind::UniformAware,
        BranchKind::ApproxRatio,
        BranchKind::CappedApprox,
    ][i % 5]
}

/// Serial reference chains built from the single-step primitives only.
fn reference_chain(algo: Algorithm, target: &FactorizedTarget, kernel: &ProposalKernel, seed: u64, n: u64) -> Vec<Vec<f64>> {
    let sched = make_schedule(seed, target.dimension(), target.len()).unwrap();
    let order: Vec<usize> = (0..target.len()).collect();
    let mut state = ChainPoint::new(target, ParamVector::new(vec![0.3, -0.2])).unwrap();
    let mut out = Vec::new();
    for t in 0..n {
        state = match algo {
            Algorithm::Mh => standard_mh_step(&state, target, kernel, t, &sched).unwrap().0,
            Algorithm::Da => {
                let proposed = propose(&state.theta, kernel, &sched.innovation(t)).unwrap();
                let o = delayed_accept(target, &order, &state, &proposed, t, &sched).unwrap();
                match o.proposed_terms {
                    Some(terms) => ChainPoint { theta: proposed, terms },
                    None => state,
                }
            }
        };
        out.push(state.theta.to_vec());
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn prefetched_chain_equals_single_step_chain(
        seed in any::<u64>(),
        workers in 1usize..10,
        policy in 0usize..5,
        da in any::<bool>(),
    ) {
        let target = split_target();
        let kernel = ProposalKernel::isotropic(2, 1.2).unwrap();
        let algo = if da { Algorithm::Da } else { Algorithm::Mh };
        let n = 300;
        let sched = make_schedule(seed, 2, target.len()).unwrap();
        let config = SamplerConfig {
            algorithm: algo,
            prefetch: Some(PrefetchConfig {
                workers,
                policy: BranchPolicy::of_kind(policy_kind(policy), 0.9),
            }),
            burnin: 0,
            iterations: n,
            thin: 1,
            order: OrderPolicy::default(),
            adapt: false,
        };
        let run = Sampler::new(&target, kernel.clone(), &sched, config).unwrap()
            .run(ParamVector::new(vec![0.3, -0.2])).unwrap();
        let got: Vec<Vec<f64>> = run.trace.states.iter().map(|s| s.to_vec()).collect();
        let want = reference_chain(algo, &target, &kernel, seed, n);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn schedule_is_a_pure_function(seed in any::<u64>(), t in 0u64..1_000_000, k in 1usize..5) {
        let a = make_schedule(seed, 3, 4).unwrap();
        let b = make_schedule(seed, 3, 4).unwrap();
        prop_assert_eq!(a.uniform(t, k).to_bits(), b.uniform(t, k).to_bits());
        prop_assert_eq!(a.innovation(t), b.innovation(t));
        let u = a.uniform(t, k);
        prop_assert!(u > 0.0 && u < 1.0);
    }

    #[test]
    fn random_walk_q_ratio_is_zero(x in prop::collection::vec(-1e3f64..1e3, 3), y in prop::collection::vec(-1e3f64..1e3, 3)) {
        let k = ProposalKernel::random_walk(3, vec![2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5]).unwrap();
        prop_assert!(k.is_symmetric());
        prop_assert_eq!(k.log_q_ratio(&x, &y), 0.0);
    }

    #[test]
    fn reordering_is_a_tier_respecting_permutation(
        attempts in prop::collection::vec(1u64..100, 5),
        frac in prop::collection::vec(0.0f64..1.0, 5),
        last in prop::collection::vec(-50.0f64..0.0, 5),
        kind in 0usize..3,
    ) {
        let mut b = FactorizedTarget::builder(1);
        for (i, tier) in [CostTier::Cheap, CostTier::Cheap, CostTier::Expensive, CostTier::Expensive, CostTier::Expensive].into_iter().enumerate() {
            b = b.factor(format!("f{i}"), tier, |_: &[f64]| 0.0);
        }
        let target = b.build().unwrap();
        let mut stats = FactorStats::new(5);
        for i in 0..5 {
            stats.attempts[i] = attempts[i];
            stats.passes[i] = (frac[i] * attempts[i] as f64) as u64;
            stats.last_values[i] = last[i];
        }
        let kind = [OrderKind::Fixed, OrderKind::BySuccessRate, OrderKind::ByLastValue][kind];
        let order = reorder_factors(&target, &OrderPolicy::new(kind, 10).unwrap(), &stats).unwrap();
        let mut sorted = order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
        prop_assert!(order[..2].iter().all(|&i| i < 2));
    }

    #[test]
    fn exact_da_kernel_is_stationary(
        weights in prop::collection::vec(prop::collection::vec(0.05f64..5.0, 2..=4), 2..=12),
        q in prop::collection::vec(0.05f64..1.0, 144),
    ) {
        let n = weights.len();
        let k = weights[0].len();
        let split = DiscreteSplit {
            weights: (0..k).map(|j| weights.iter().map(|w| w.get(j).copied().unwrap_or(1.0)).collect()).collect(),
        };
        let unnorm: Vec<f64> = (0..n).map(|x| split.weights.iter().map(|w| w[x]).product()).collect();
        let z: f64 = unnorm.iter().sum();
        let pi: Vec<f64> = unnorm.iter().map(|v| v / z).collect();
        let proposal: Vec<Vec<f64>> = (0..n)
            .map(|x| {
                let row: Vec<f64> = (0..n).map(|y| q[x * 12 + y]).collect();
                let s: f64 = row.iter().sum();
                row.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let p = exact_da_kernel(&pi, &proposal, &split).unwrap();
        for y in 0..n {
            let flow: f64 = (0..n).map(|x| pi[x] * p[x][y]).sum();
            prop_assert!((flow - pi[y]).abs() <= 1e-10);
        }
    }

    #[test]
    fn cheap_rejection_never_touches_expensive_factors(seed in any::<u64>(), sd in 0.5f64..5.0) {
        struct Counted(Arc<AtomicUsize>);
        impl LogTerm for Counted {
            fn log_term(&self, theta: &[f64]) -> f64 {
                self.0.fetch_add(1, Ordering::Relaxed);
                -0.5 * theta[0] * theta[0]
            }
        }
        let calls = Arc::new(AtomicUsize::new(0));
        let target = FactorizedTarget::builder(1)
            .factor("cheap", CostTier::Cheap, |t: &[f64]| -2.0 * t[0] * t[0])
            .factor("expensive", CostTier::Expensive, Counted(calls.clone()))
            .build()
            .unwrap();
        let kernel = ProposalKernel::isotropic(1, sd).unwrap();
        let sched = make_schedule(seed, 1, 2).unwrap();
        let mut state = ChainPoint::new(&target, ParamVector::new(vec![0.0])).unwrap();
        for t in 0..200 {
            let before = calls.load(Ordering::Relaxed);
            let proposed = propose(&state.theta, &kernel, &sched.innovation(t)).unwrap();
            let o = delayed_accept(&target, &[0, 1], &state, &proposed, t, &sched).unwrap();
            let used = calls.load(Ordering::Relaxed) - before;
            if !o.stages[0].passed {
                prop_assert_eq!(used, 0);
                prop_assert_eq!(o.stages_evaluated, 1);
            }
            if let Some(terms) = o.proposed_terms {
                state = ChainPoint { theta: proposed, terms };
            }
        }
    }

    #[test]
    fn combined_probability_bounds(rhos in prop::collection::vec(1e-8f64..1e8, 1..16)) {
        let p = combined_acceptance_prob(&rhos).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(p <= rhos.iter().product::<f64>().min(1.0) * (1.0 + 1e-12));
    }
}

fn walk_draws(k: usize, policy: &BranchPolicy, seed: u64, pool: &WorkerPool) -> u64 {
    let target = split_target();
    let kernel = ProposalKernel::isotropic(2, 1.2).unwrap();
    let sched = make_schedule(seed, 2, target.len()).unwrap();
    let order = [0usize, 1, 2];
    let spec = TourSpec {
        target: &target,
        kernel: &kernel,
        schedule: &sched,
        order: &order,
        horizon: 64,
    };
    let root = ChainPoint::new(&target, ParamVector::new(vec![0.3, -0.2])).unwrap();
    let tour = build_tour(k, policy, &root, 0, &spec).unwrap();
    let evals: BTreeMap<NodeIndex, _> = evaluate_tour(pool, &tour, &target, &order).unwrap();
    consume_tour(&tour, &evals, &root, &spec).unwrap().draws()
}

#[test]
fn expected_draws_are_nondecreasing_in_capacity() {
    let pool = WorkerPool::new(WorkerPoolConfig { workers: 1 }).unwrap();
    for policy in [BranchPolicy::static_half(), BranchPolicy::observed(0.3), BranchPolicy::observed(0.8)] {
        let mut prev = 0.0;
        for k in 1..=10 {
            let mean = (0..120).map(|s| walk_draws(k, &policy, s, &pool) as f64).sum::<f64>() / 120.0;
            assert!(mean >= prev, "K={k}: {mean} < {prev}");
            prev = mean;
        }
    }
}

#[test]
fn static_half_full_trees_advance_depth_steps() {
    let pool = WorkerPool::new(WorkerPoolConfig { workers: 2 }).unwrap();
    for depth in 1..=5u32 {
        let k = (1usize << depth) - 1;
        for seed in 0..40 {
            assert_eq!(walk_draws(k, &BranchPolicy::static_half(), seed, &pool), depth as u64);
        }
    }
}
