//! Deterministic random streams.
//!
//! Every sample of every experiment owns a stream derived from the triple
//! `(master_seed, experiment_id, sample_index)`. Streams never depend on which
//! worker evaluates the sample, which makes shard counts irrelevant to results.
//!
//! Brownian paths draw their Gaussians from [`SlotRng`], a counter-based
//! generator addressed by `(key, slot)`: the value attached to a dyadic knot is
//! a pure function of its address, whatever order knots are refined in.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geom::Point;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combine two words into one key.
#[inline]
pub fn combine(a: u64, b: u64) -> u64 {
    mix64(a ^ mix64(b.wrapping_add(GOLDEN)))
}

/// Stable 64-bit identifier of an experiment name (FNV-1a).
pub fn experiment_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Address of a stream: the schedule triple plus a derivation tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub master: u64,
    pub experiment: u64,
    pub index: u64,
    pub tag: u64,
}

impl StreamKey {
    fn seed(&self) -> [u8; 32] {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.master.to_le_bytes());
        seed[8..16].copy_from_slice(&self.experiment.to_le_bytes());
        seed[16..24].copy_from_slice(&self.index.to_le_bytes());
        seed[24..].copy_from_slice(&self.tag.to_le_bytes());
        seed
    }

    pub fn derive(&self, tag: u64) -> StreamKey {
        StreamKey { tag: combine(self.tag, tag), ..*self }
    }

    /// Single-word key for counter-based draws.
    pub fn word(&self) -> u64 {
        combine(combine(self.master, self.experiment), combine(self.index, self.tag))
    }
}

/// A sequential random stream (ChaCha8) with a known address.
#[derive(Clone, Debug)]
pub struct Stream {
    key: StreamKey,
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn from_key(key: StreamKey) -> Stream {
        Stream { key, rng: ChaCha8Rng::from_seed(key.seed()) }
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    /// Independent child stream; does not advance `self`.
    pub fn derive(&self, tag: u64) -> Stream {
        Stream::from_key(self.key.derive(tag))
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Stream for sample `sample_index` of experiment `experiment_id`.
pub fn seed_schedule(master_seed: u64, experiment_id: u64, sample_index: u64) -> Stream {
    Stream::from_key(StreamKey { master: master_seed, experiment: experiment_id, index: sample_index, tag: 0 })
}

/// Counter-based generator: a SplitMix64 sequence seeded by hash(key, slot).
#[derive(Clone, Debug)]
pub struct SlotRng {
    state: u64,
}

impl SlotRng {
    #[inline]
    pub fn new(key: u64, slot: u64) -> SlotRng {
        SlotRng { state: combine(key, slot) }
    }

    /// Generator for auxiliary uniforms attached to the same slot.
    #[inline]
    pub fn aux(key: u64, slot: u64) -> SlotRng {
        SlotRng { state: combine(key ^ 0xA5A5_A5A5_A5A5_A5A5, slot) }
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.sample(StandardNormal)
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Gaussian vector with `d` independent coordinates of variance `var`.
    #[inline]
    pub fn gaussian_point(&mut self, d: usize, var: f64) -> Point {
        let sd = var.sqrt();
        let mut p = Point::ZERO;
        for c in p.0.iter_mut().take(d) {
            *c = sd * self.normal();
        }
        p
    }
}

impl RngCore for SlotRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }
    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}
