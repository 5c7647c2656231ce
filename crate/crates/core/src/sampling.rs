//! Reproducible uniform draws.
//!
//! The generator is xoshiro256++ whose four state words come from SplitMix64 applied to
//! the 64-bit seed (increment `0x9e3779b97f4a7c15`, multipliers `0xbf58476d1ce4e5b9` and
//! `0x94d049bb133111eb`, shifts 30, 27, 31). A unit draw is `(next_u64 >> 11) · 2⁻⁵³`,
//! and a parameter entry is `lower + u · (upper − lower)`, drawn entry by entry.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::model::ParameterDomain;

#[derive(Debug, Clone)]
pub struct UniformSampler {
    rng: Xoshiro256PlusPlus,
}

impl UniformSampler {
    pub fn new(seed: u64) -> Self {
        UniformSampler {
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.unit() * (hi - lo)
    }

    /// Uniform integer in `0..n`, `n > 0`.
    pub fn index(&mut self, n: usize) -> usize {
        ((self.unit() * n as f64) as usize).min(n - 1)
    }

    pub fn parameter(&mut self, domain: &ParameterDomain) -> Vec<f64> {
        domain
            .lower
            .iter()
            .zip(&domain.upper)
            .map(|(&lo, &hi)| self.range(lo, hi))
            .collect()
    }

    /// `k` distinct indices from `0..n`, sorted, by a partial Fisher-Yates shuffle.
    pub fn subset(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut all: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.index(n - i);
            all.swap(i, j);
        }
        let mut out = all[..k].to_vec();
        out.sort_unstable();
        out
    }
}

/// `count` parameters drawn uniformly from the domain.
pub fn uniform_parameters(domain: &ParameterDomain, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut s = UniformSampler::new(seed);
    (0..count).map(|_| s.parameter(domain)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn splitmix(state: &mut u64) -> u64 {
        *state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    #[test]
    fn generator_matches_documented_algorithm() {
        for seed in [0u64, 1, 42, u64::MAX] {
            let mut st = seed;
            let mut s: [u64; 4] = std::array::from_fn(|_| splitmix(&mut st));
            let mut reference = || {
                let out = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
                let t = s[1] << 17;
                s[2] ^= s[0];
                s[3] ^= s[1];
                s[1] ^= s[2];
                s[0] ^= s[3];
                s[2] ^= t;
                s[3] = s[3].rotate_left(45);
                out
            };
            let mut g = UniformSampler::new(seed);
            for _ in 0..8 {
                assert_eq!(g.next_u64(), reference());
            }
        }
    }

    #[test]
    fn draws_stay_in_the_domain_and_repeat() {
        let d = ParameterDomain::new(vec![0.7, -1.0], vec![0.9, 1.0]).unwrap();
        let a = uniform_parameters(&d, 50, 7);
        assert_eq!(a, uniform_parameters(&d, 50, 7));
        assert_ne!(a, uniform_parameters(&d, 50, 8));
        assert!(a.iter().all(|p| d.contains(p)));
    }

    #[test]
    fn subsets_are_distinct_and_sorted() {
        let mut s = UniformSampler::new(3);
        for k in [0, 1, 5, 20] {
            let v = s.subset(20, k);
            assert_eq!(v.len(), k);
            assert!(v.windows(2).all(|w| w[0] < w[1]));
            assert!(v.iter().all(|&i| i < 20));
        }
    }
}
