// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Seeded, platform-independent random stream.
///
/// A `(seed, stream_id)` pair always yields the same sequence. Streams with
/// different ids are independent ChaCha streams under the same key, so
/// concurrent consumers split by id instead of sharing one stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform01(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform01()
    }

    /// Uniform index in `0..n`.
    pub fn choice(&mut self, n: usize) -> Result<usize> {
        if n == 0 {
            return Err(Error::arg("choice(n) needs n >= 1"));
        }
        Ok(self.rng.random_range(0..n))
    }

    /// `k` distinct indices drawn from `0..n`, in draw order.
    pub fn subset(&mut self, n: usize, k: usize) -> Result<Vec<usize>> {
        if k > n {
            return Err(Error::arg(format!("subset size {k} exceeds population {n}")));
        }
        Ok(rand::seq::index::sample(&mut self.rng, n, k).into_vec())
    }

    pub fn draw_normal(&mut self, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.standard_normal()).collect()
    }

    pub fn draw_uniform(&mut self, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.uniform01()).collect()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.rng.random_range(0..=i);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_full_is_permutation() {
        let mut s = RngStream::new(3, 0);
        let mut p = s.subset(5, 5).unwrap();
        p.sort_unstable();
        assert_eq!(p, vec![0, 1, 2, 3, 4]);
        assert!(s.subset(3, 4).is_err());
        assert!(s.subset(4, 0).unwrap().is_empty());
        assert!(s.choice(0).is_err());
    }

    #[test]
    fn subset_indices_distinct() {
        let mut s = RngStream::new(11, 4);
        for k in 0..=20 {
            let mut v = s.subset(20, k).unwrap();
            v.sort_unstable();
            v.dedup();
            assert_eq!(v.len(), k);
            assert!(v.iter().all(|&i| i < 20));
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let a = RngStream::new(42, 9).draw_normal(64);
        let b = RngStream::new(42, 9).draw_normal(64);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = RngStream::new(42, 10).draw_normal(64);
        assert_ne!(a, c);
    }

    #[test]
    fn normal_moments() {
        let xs = RngStream::new(2024, 0).draw_normal(100_000);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((sd - 1.0).abs() < 0.02, "sd {sd}");
    }

    #[test]
    fn streams_are_uncorrelated() {
        let a = RngStream::new(5, 0).draw_normal(20_000);
        let b = RngStream::new(5, 1).draw_normal(20_000);
        let r = crate::tensor::pearson(&a, &b).unwrap();
        assert!(r.abs() < 0.03, "cross-stream correlation {r}");
    }
}
