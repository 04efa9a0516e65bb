//! Seedable random streams and the primitive samplers: uniform on the open
//! unit interval, standard Gumbel, and standard Gaussian.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::autodiff::Tensor;

/// Deterministic, splittable pseudo-random stream.
///
/// Children created by [`Rng::split`] depend only on the parent seed and
/// the label, never on how much of the parent stream has been consumed.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha12Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream identified by `label`.
    pub fn split(&self, label: u64) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(label.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    pub fn next_word(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on the open interval `(0, 1)`.
    ///
    /// The top 53 bits `k` of a word map to `(k + 0.5) / 2^53`, so neither
    /// endpoint can occur and `log(-log u)` stays finite.
    pub fn uniform(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        ((self.next_word() >> 11) as f64 + 0.5) * SCALE
    }

    pub fn gumbel(&mut self) -> f64 {
        gumbel_from_uniform(self.uniform())
    }

    /// Standard normal via the Box–Muller transform, one draw per call.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Inversion sampling: `g = -log(-log u)`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

fn fill(rng: &mut Rng, shape: &[usize], mut draw: impl FnMut(&mut Rng) -> f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| draw(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

pub fn sample_uniform(rng: &mut Rng, shape: &[usize]) -> Tensor {
    fill(rng, shape, Rng::uniform)
}

pub fn sample_gumbel(rng: &mut Rng, shape: &[usize]) -> Tensor {
    fill(rng, shape, Rng::gumbel)
}

pub fn sample_gaussian(rng: &mut Rng, shape: &[usize]) -> Tensor {
    fill(rng, shape, Rng::gaussian)
}
