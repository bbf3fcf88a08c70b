//! Seeded, splittable random streams.
//!
//! A stream is identified by `(seed, stream_id)`. Each pair maps to an
//! independent ChaCha20 keystream: the seed is expanded into the 256-bit key
//! and the stream id selects the ChaCha nonce, so substreams never overlap and
//! can be consumed from any worker in any order.
//!
//! Gaussian draws use the Box-Muller transform. Every pair of uniforms
//! `(u1, u2)` yields two normals; the cosine branch is returned first and the
//! sine branch is cached for the next call.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Identity of a reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct StreamId {
    pub seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    id: StreamId,
    inner: ChaCha20Rng,
    spare: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            id: StreamId { seed, stream },
            inner,
            spare: None,
        }
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    /// A fresh stream derived from this stream's seed.
    pub fn substream(&self, stream: u64) -> Self {
        Self::new(self.id.seed, stream)
    }

    /// Uniform in the open interval (0, 1], 53 bits of resolution.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (sin, cos) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        self.spare = Some(r * sin);
        r * cos
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    /// Same values as repeated [`Self::normal`] calls, drawn a pair at a time.
    pub fn fill_normal(&mut self, out: &mut [f64], mean: f64, std: f64) {
        let start = match (self.spare, out.first_mut()) {
            (Some(z), Some(first)) => {
                self.spare = None;
                *first = mean + std * z;
                1
            }
            _ => 0,
        };
        let mut pairs = out[start..].chunks_exact_mut(2);
        for pair in &mut pairs {
            let u1 = self.uniform_open();
            let u2 = self.uniform();
            let r = (-2.0 * u1.ln()).sqrt();
            let (sin, cos) = (2.0 * std::f64::consts::PI * u2).sin_cos();
            pair[0] = mean + std * r * cos;
            pair[1] = mean + std * r * sin;
        }
        if let [last] = pairs.into_remainder() {
            *last = self.normal(mean, std);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}
