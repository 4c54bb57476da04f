//! Seeded mode and fiber-batch sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

use crate::error::{CpdError, Result};

/// Identity of the generator behind every random draw, echoed into outputs.
pub const PRNG_ID: &str = "rand_chacha::ChaCha8Rng (rand_chacha 0.9, seed_from_u64)";

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SamplerState {
    seed: u64,
    rng: ChaCha8Rng,
    /// Cumulative mode weights; `None` means uniform.
    cumulative: Option<Vec<f64>>,
    n_modes: usize,
}

impl SamplerState {
    pub fn new(seed: u64, n_modes: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(CpdError::arg("sampler needs at least one mode"));
        }
        Ok(SamplerState {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cumulative: None,
            n_modes,
        })
    }

    /// Non-uniform mode probabilities; must be positive and sum to 1.
    pub fn with_mode_weights(mut self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.n_modes {
            return Err(CpdError::arg(format!(
                "{} mode weights given for {} modes",
                weights.len(),
                self.n_modes
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(CpdError::arg("mode weights must be positive and finite"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(CpdError::arg(format!("mode weights sum to {total}, expected 1")));
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        self.cumulative = Some(cumulative);
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Draws a 1-based mode.
    pub fn sample_mode(&mut self) -> usize {
        match &self.cumulative {
            None => self.rng.random_range(1..=self.n_modes),
            Some(cum) => {
                let u: f64 = self.rng.random();
                cum.iter().position(|&c| u < c).unwrap_or(self.n_modes - 1) + 1
            }
        }
    }

    /// A uniformly random `batch`-subset of `1..=jn`, returned sorted ascending.
    pub fn sample_fibers(&mut self, jn: usize, batch: usize) -> Result<Vec<usize>> {
        let mut out = self.sample_fibers0(jn, batch)?;
        for j in &mut out {
            *j += 1;
        }
        Ok(out)
    }

    /// 0-based variant of [`Self::sample_fibers`].
    pub(crate) fn sample_fibers0(&mut self, jn: usize, batch: usize) -> Result<Vec<usize>> {
        if batch == 0 {
            return Err(CpdError::arg("batch size must be at least 1"));
        }
        if batch > jn {
            return Err(CpdError::arg(format!("batch size {batch} exceeds fiber count {jn}")));
        }
        let mut out = if batch * 16 > jn {
            // partial Fisher-Yates over the whole pool
            let mut pool: Vec<usize> = (0..jn).collect();
            for i in 0..batch {
                let k = self.rng.random_range(i..jn);
                pool.swap(i, k);
            }
            pool.truncate(batch);
            pool
        } else {
            let mut seen = HashSet::with_capacity(batch * 2);
            let mut picked = Vec::with_capacity(batch);
            while picked.len() < batch {
                let j = self.rng.random_range(0..jn);
                if seen.insert(j) {
                    picked.push(j);
                }
            }
            picked
        };
        out.sort_unstable();
        Ok(out)
    }
}

/// Minibatch size per iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchSchedule {
    Fixed(usize),
    /// `B(r) = ⌈B0 · r^{1+ε}⌉`, capped at J_n.
    Growing { base: usize, epsilon: f64 },
}

impl BatchSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BatchSchedule::Fixed(0) | BatchSchedule::Growing { base: 0, .. } => {
                Err(CpdError::arg("batch size must be at least 1"))
            }
            BatchSchedule::Growing { epsilon, .. } if !(epsilon > 0.0) => {
                Err(CpdError::arg("growing batch needs epsilon > 0"))
            }
            _ => Ok(()),
        }
    }

    /// Batch size at iteration `r` (1-based) for a mode with `jn` fibers.
    pub fn size(&self, r: u64, jn: usize) -> usize {
        let b = match *self {
            BatchSchedule::Fixed(b) => b,
            BatchSchedule::Growing { base, epsilon } => {
                let v = (base as f64 * (r.max(1) as f64).powf(1.0 + epsilon)).ceil();
                if v >= jn as f64 {
                    jn
                } else {
                    v as usize
                }
            }
        };
        b.min(jn).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_mode_always_one() {
        let mut s = SamplerState::new(3, 1).unwrap();
        assert!((0..100).all(|_| s.sample_mode() == 1));
    }

    #[test]
    fn uniform_mode_frequencies() {
        let mut s = SamplerState::new(42, 3).unwrap();
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[s.sample_mode() - 1] += 1;
        }
        for c in counts {
            let freq = c as f64 / 30_000.0;
            assert!((0.31..=0.355).contains(&freq), "{freq}");
        }
    }

    #[test]
    fn weighted_modes_follow_weights() {
        let mut s = SamplerState::new(5, 3).unwrap().with_mode_weights(&[0.5, 0.25, 0.25]).unwrap();
        let mut counts = [0usize; 3];
        for _ in 0..40_000 {
            counts[s.sample_mode() - 1] += 1;
        }
        assert!((counts[0] as f64 / 40_000.0 - 0.5).abs() < 0.015);
        assert!(SamplerState::new(5, 2).unwrap().with_mode_weights(&[0.5, 0.6]).is_err());
        assert!(SamplerState::new(5, 2).unwrap().with_mode_weights(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn identical_seeds_identical_draws() {
        let mut a = SamplerState::new(9, 4).unwrap();
        let mut b = SamplerState::new(9, 4).unwrap();
        for _ in 0..50 {
            assert_eq!(a.sample_mode(), b.sample_mode());
            assert_eq!(a.sample_fibers(1000, 7).unwrap(), b.sample_fibers(1000, 7).unwrap());
        }
    }

    #[test]
    fn full_batch_is_full_set() {
        let mut s = SamplerState::new(1, 3).unwrap();
        assert_eq!(s.sample_fibers(6, 6).unwrap(), vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn degenerate_batches() {
        let mut s = SamplerState::new(1, 3).unwrap();
        assert!(s.sample_fibers(6, 0).is_err());
        assert!(s.sample_fibers(6, 7).is_err());
    }

    #[test]
    fn distinct_and_in_range_both_paths() {
        let mut s = SamplerState::new(2, 3).unwrap();
        for (jn, b) in [(10, 5), (100_000, 20), (32, 2)] {
            for _ in 0..200 {
                let f = s.sample_fibers(jn, b).unwrap();
                assert_eq!(f.len(), b);
                assert!(f.windows(2).all(|w| w[0] < w[1]));
                assert!(f.iter().all(|&j| (1..=jn).contains(&j)));
            }
        }
    }

    #[test]
    fn pairs_out_of_four_are_uniform() {
        let mut s = SamplerState::new(77, 3).unwrap();
        let mut counts = std::collections::HashMap::new();
        let draws = 60_000;
        for _ in 0..draws {
            *counts.entry(s.sample_fibers(4, 2).unwrap()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        let p = 1.0 / 6.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for &c in counts.values() {
            assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "{c}");
        }
    }

    #[test]
    fn batch_schedules() {
        let fixed = BatchSchedule::Fixed(20);
        assert_eq!(fixed.size(1, 10_000), 20);
        assert_eq!(fixed.size(500, 10_000), 20);
        assert_eq!(fixed.size(1, 8), 8);
        let grow = BatchSchedule::Growing { base: 2, epsilon: 0.5 };
        assert_eq!(grow.size(1, 1000), 2);
        assert_eq!(grow.size(4, 1000), 16);
        assert_eq!(grow.size(5, 1000), (2.0 * 5f64.powf(1.5)).ceil() as usize);
        assert_eq!(grow.size(1_000_000, 1000), 1000);
        assert!(BatchSchedule::Fixed(0).validate().is_err());
        assert!(BatchSchedule::Growing { base: 1, epsilon: 0.0 }.validate().is_err());
    }

    #[test]
    fn split_seed_is_spread() {
        let seeds: HashSet<u64> = (0..1000).map(|i| split_seed(1, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(split_seed(1, 0), split_seed(2, 0));
    }
}
