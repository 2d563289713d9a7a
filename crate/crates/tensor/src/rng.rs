//! Portable random numbers.
//!
//! ChaCha8 keyed by a 64-bit seed, with 2^64 independent streams. Normal
//! draws use Box–Muller with the pure-Rust `libm` transcendental functions so
//! that the same seed and call sequence produce identical values on every
//! platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::element::Element;
use crate::tensor::Tensor;

/// Identifier recorded alongside seeds in checkpoints and reports.
pub const ALGORITHM: &str = "chacha8-boxmuller";

const INDEX_BITS: u32 = 48;

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
    seed: u64,
    stream: u64,
    spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng {
            inner,
            seed,
            stream,
            spare: None,
        }
    }

    /// Independent generator for `(domain, index)`, e.g. one per training step.
    pub fn derive(seed: u64, domain: u16, index: u64) -> Self {
        let index = index & ((1u64 << INDEX_BITS) - 1);
        Self::with_stream(seed, ((domain as u64) << INDEX_BITS) | index)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of 32-bit words consumed so far on this stream.
    pub fn position(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[0, 1)` on the grid `k / 2^p`, `p` the precision of `T`.
    ///
    /// Both `u` and `1 - u` are exactly representable in `T`.
    pub fn uniform_grid<T: Element>(&mut self) -> T {
        let bits = T::MANTISSA_BITS;
        let k = self.next_u64() >> (64 - bits);
        T::from_f64(k as f64 / (1u64 << bits) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` without modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal via Box–Muller; the second value of each pair is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }

    pub fn normal_tensor<T: Element>(&mut self, shape: &[usize]) -> Tensor<T> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(self.normal())).collect();
        Tensor::new(shape, data).expect("shape product matches")
    }

    pub fn uniform_tensor<T: Element>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(self.uniform_range(lo, hi))).collect();
        Tensor::new(shape, data).expect("shape product matches")
    }

    /// Fisher–Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i as u64 + 1) as usize;
            p.swap(i, j);
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
        assert_eq!(a.position(), b.position());
    }

    #[test]
    fn derived_streams_differ() {
        let mut a = Rng::derive(7, 1, 0);
        let mut b = Rng::derive(7, 1, 1);
        let mut c = Rng::derive(7, 2, 0);
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert!(x != y && y != z && x != z);
    }

    #[test]
    fn frozen_first_draws() {
        // pinned so that a dependency bump that changes the stream is caught
        assert_eq!(Rng::new(0).next_u64(), 0xb585f767a79a3b6c);
        let mut r = Rng::new(123);
        let bits: Vec<u64> = (0..4).map(|_| r.normal().to_bits()).collect();
        assert_eq!(
            bits,
            [0x3fef0b77e90754ff, 0x3ffb3f19f835bfd8, 0xbfb7d68986142381, 0xbfecc4dd5d738e0a]
        );
    }

    #[test]
    fn normal_moments() {
        let mut r = Rng::new(11);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn grid_uniform_complement_is_exact() {
        let mut r = Rng::new(2);
        for _ in 0..1000 {
            let u: f32 = r.uniform_grid();
            let c = 1.0 - u;
            assert_eq!(1.0 - c, u);
            let u: f64 = r.uniform_grid();
            let c = 1.0 - u;
            assert_eq!(1.0 - c, u);
        }
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut r = Rng::new(4);
        let mut p = r.permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
