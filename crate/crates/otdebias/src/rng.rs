//! Deterministic counter-based pseudo-randomness.
//!
//! The generator is SplitMix64 evaluated at `seed + counter * GAMMA`: a pure
//! function of `(seed, counter)`, so equal seeds give bit-identical streams on
//! every platform and per-row child generators can be derived without shared
//! state.

use crate::error::Result;
use crate::tensor::Tensor;

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// Splittable counter-based generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    counter: u64,
    spare_normal: Option<u64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            counter: 0,
            spare_normal: None,
        }
    }

    /// Independent child stream. Children of distinct `stream` ids are
    /// decorrelated from each other and from the parent.
    pub fn split(&self, stream: u64) -> Rng {
        Rng::new(mix(self.seed ^ mix(stream.wrapping_mul(GAMMA) ^ 0x5851_f42d_4c95_7f2d)))
    }

    pub fn next_u64(&mut self) -> u64 {
        let z = self.seed.wrapping_add(self.counter.wrapping_mul(GAMMA));
        self.counter += 1;
        mix(z.wrapping_add(GAMMA))
    }

    /// Uniform draw strictly inside (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw on [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * ((self.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller; the sine partner is cached so draws come
    /// in deterministic pairs.
    pub fn normal(&mut self) -> f64 {
        if let Some(bits) = self.spare_normal.take() {
            return f64::from_bits(bits);
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some((r * theta.sin()).to_bits());
        r * theta.cos()
    }

    pub fn range(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Tensor of i.i.d. standard normal draws.
pub fn normal_sample(rng: &mut Rng, shape: &[usize]) -> Result<Tensor> {
    let mut t = Tensor::zeros(shape)?;
    for v in t.data_mut() {
        *v = rng.normal();
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..1_000_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn normal_sample_deterministic() {
        let t1 = normal_sample(&mut Rng::new(42), &[128]).unwrap();
        let t2 = normal_sample(&mut Rng::new(42), &[128]).unwrap();
        for (a, b) in t1.data().iter().zip(t2.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn normal_sample_moments() {
        // Law-of-large-numbers check at ~3 sigma / sqrt(n) tolerance.
        let n = 100_000;
        let t = normal_sample(&mut Rng::new(42), &[n]).unwrap();
        let mean = t.data().iter().sum::<f64>() / n as f64;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn split_streams_differ() {
        let parent = Rng::new(7);
        let mut c0 = parent.split(0);
        let mut c1 = parent.split(1);
        let draws0: Vec<u64> = (0..8).map(|_| c0.next_u64()).collect();
        let draws1: Vec<u64> = (0..8).map(|_| c1.next_u64()).collect();
        assert_ne!(draws0, draws1);
    }

    #[test]
    fn uniform_strictly_inside_unit_interval() {
        let mut rng = Rng::new(3);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }
}
