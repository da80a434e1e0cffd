//! Counter-based deterministic random streams.
//!
//! A [`RngStream`] is a pure function of `(key, counter)`: the n-th draw does
//! not depend on any state other than the stream key, so streams for
//! different slices can be derived independently and consumed in any order
//! or on any thread.

use rand_core::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngStream {
    key: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix64(seed ^ 0xD134_2543_DE82_EF95),
            counter: 0,
        }
    }

    /// Stream for one slice of one volume in one epoch.
    pub fn for_slice(seed: u64, source_id: &str, slice_index: usize, epoch: u64) -> Self {
        let mut key = mix64(seed ^ 0xA076_1D64_78BD_642F);
        key = mix64(key ^ fnv1a64(source_id.as_bytes()));
        key = mix64(key ^ (slice_index as u64).wrapping_mul(0xE703_7ED1_A0B4_28DB));
        key = mix64(key ^ epoch.wrapping_mul(0x8EBC_6AF0_9C88_C6E3));
        Self { key, counter: 0 }
    }

    /// Independent child stream; does not advance `self`.
    pub fn derive(&self, label: u64) -> Self {
        Self {
            key: mix64(self.key ^ mix64(label ^ 0x94D0_49BB_1331_11EB)),
            counter: 0,
        }
    }

    /// Number of 64-bit draws taken so far.
    pub fn draws(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        let x = self.key ^ self.counter.wrapping_mul(GOLDEN);
        self.counter = self.counter.wrapping_add(1);
        mix64(mix64(x) ^ self.key.rotate_left(29))
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[low, high)`; returns `low` when the interval is empty.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        let u = self.next_f64();
        low + u * (high - low)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        (RngStream::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        RngStream::next_u64(self)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = RngStream::next_u64(self).to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}
