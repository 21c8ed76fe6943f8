//! Pre-committed randomness for the chain.
//!
//! Every random quantity the chain consumes is a pure function of the seed and
//! an absolute time index: the proposal innovation `innovation(t)` and one
//! uniform per acceptance stage `uniform(t, k)`. Speculative tree nodes at the
//! same depth therefore see the same innovation and the same uniforms, which is
//! what makes a prefetched chain reproduce the serial one exactly.
//!
//! Each time index owns its own ChaCha8 stream (stream id = `t`). Stage
//! uniforms occupy the first `stages` 64-bit words of the stream and the
//! innovation is drawn from the words that follow, so any `(t, k)` can be
//! queried out of order without replaying history.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// 2^-53, the spacing of the 53-bit mantissa grid used for uniforms.
const UNIT: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Clone, Debug)]
pub struct RandomnessSchedule {
    seed: u64,
    dimension: usize,
    stages: usize,
    base: ChaCha8Rng,
}

impl RandomnessSchedule {
    pub fn new(seed: u64, dimension: usize, stages: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidArgument("schedule dimension must be >= 1".into()));
        }
        if stages == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one stage".into()));
        }
        Ok(Self {
            seed,
            dimension,
            stages,
            base: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Number of acceptance stages with a committed uniform per time index.
    pub fn stages(&self) -> usize {
        self.stages
    }

    fn stream(&self, t: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(t);
        rng.set_word_pos(0);
        rng
    }

    /// Uniform on `[0, 1)` for time `t` and 1-based stage `k`.
    ///
    /// # Panics
    /// If `k` is zero or exceeds the schedule's stage capacity.
    pub fn uniform(&self, t: u64, k: usize) -> f64 {
        assert!(
            (1..=self.stages).contains(&k),
            "stage {k} outside schedule capacity 1..={}",
            self.stages
        );
        let mut rng = self.stream(t);
        // Each u64 is two 32-bit ChaCha words.
        rng.set_word_pos(2 * (k as u128 - 1));
        (rng.next_u64() >> 11) as f64 * UNIT
    }

    /// Standard-normal innovation vector for time `t`.
    pub fn innovation(&self, t: u64) -> Vec<f64> {
        let mut rng = self.stream(t);
        rng.set_word_pos(2 * self.stages as u128);
        (0..self.dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }
}

/// Builds a schedule; thin wrapper kept for symmetry with the other free-function operations.
pub fn make_schedule(seed: u64, dimension: usize, stages: usize) -> Result<RandomnessSchedule> {
    RandomnessSchedule::new(seed, dimension, stages)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_queries_are_identical() {
        let s = make_schedule(1, 1, 2).unwrap();
        assert_eq!(s.uniform(5, 1).to_bits(), s.uniform(5, 1).to_bits());
        assert_eq!(s.innovation(5), s.innovation(5));
    }

    #[test]
    fn same_seed_same_innovations() {
        let a = make_schedule(1, 3, 2).unwrap();
        let b = make_schedule(1, 3, 2).unwrap();
        for t in 0..50 {
            assert_eq!(a.innovation(t), b.innovation(t));
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = make_schedule(1, 1, 1).unwrap();
        let b = make_schedule(2, 1, 1).unwrap();
        let differs = (0..100).any(|t| a.uniform(t, 1) != b.uniform(t, 1));
        assert!(differs);
    }

    #[test]
    fn out_of_order_access_matches_in_order() {
        let s = make_schedule(9, 2, 3).unwrap();
        let forward: Vec<f64> = (0..20).map(|t| s.uniform(t, 2)).collect();
        let backward: Vec<f64> = (0..20).rev().map(|t| s.uniform(t, 2)).collect();
        assert!(forward.iter().eq(backward.iter().rev()));
    }

    #[test]
    fn stages_and_innovations_are_distinct_streams() {
        let s = make_schedule(3, 1, 2).unwrap();
        assert_ne!(s.uniform(0, 1), s.uniform(0, 2));
        assert_ne!(s.uniform(0, 1), s.uniform(1, 1));
    }

    #[test]
    fn uniforms_look_uniform() {
        let s = make_schedule(11, 1, 1).unwrap();
        let n = 20_000;
        let mean = (0..n).map(|t| s.uniform(t, 1)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 3.0 * (1.0f64 / 12.0 / n as f64).sqrt() * 2.0);
        let zmean = (0..n).map(|t| s.innovation(t)[0]).sum::<f64>() / n as f64;
        assert!(zmean.abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn zero_stages_rejected() {
        assert!(make_schedule(1, 1, 0).is_err());
        assert!(make_schedule(1, 0, 1).is_err());
    }
}
