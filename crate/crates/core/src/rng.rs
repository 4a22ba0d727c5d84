//! Counter-based random numbers.
//!
//! Every output is a pure function of a 64-bit key and a 64-bit counter:
//!
//! ```text
//! draw(key, counter) = mix64(key + (counter + 1) * 0x9E3779B97F4A7C15)
//! mix64(z): z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!           z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!           z ^ (z >> 31)
//! ```
//!
//! This is SplitMix64 evaluated in counter mode, so any draw can be
//! recomputed independently of the ones before it and the stream is
//! identical on every platform. Uniform reals take the top 53 bits.
//!
//! Child seeds are derived with [`derive_seed`], which folds tags into the
//! parent key through `mix64`. Rollout workers get their own derived key
//! and never share a stream.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child key from a parent key and a list of tags.
pub fn derive_seed(parent: u64, tags: &[u64]) -> u64 {
    let mut key = mix64(parent ^ 0x6A09_E667_F3BC_C909);
    for &t in tags {
        key = mix64(key.wrapping_add(GOLDEN) ^ mix64(t.wrapping_add(0xBB67_AE85_84CA_A73B)));
    }
    key
}

/// A stream over `draw(key, 0), draw(key, 1), ...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    /// Stateless access to a single draw.
    #[inline]
    pub fn draw(key: u64, counter: u64) -> u64 {
        mix64(key.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = Self::draw(self.key, self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`, safe to pass to `ln`.
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` by rejection, so there is no modulo bias.
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

    /// Standard normal via Box-Muller (one draw pair per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_open01();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Exponential(1), used for Dirichlet(1, ..., 1) rows.
    pub fn exp1(&mut self) -> f64 {
        -self.next_open01().ln()
    }

    /// A flat Dirichlet sample of length `k`.
    pub fn dirichlet_flat(&mut self, k: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..k).map(|_| self.exp1()).collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        v
    }
}
