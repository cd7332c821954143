//! Seedable, splittable, counter-based random stream.
//!
//! Output `i` of a stream with key `k` is `mix(k + (i + 1) * GAMMA)`, where
//! `mix` is the SplitMix64 finalizer. The sequence depends only on `(key, i)`,
//! so a stream can be split into independent child streams by deriving a new
//! key from `(key, index)`. Results are identical on every platform and under
//! any thread schedule, provided each unit of work owns its own child stream.

use rand::RngCore;

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamRng {
    key: u64,
    counter: u64,
}

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        StreamRng {
            key: mix64(seed ^ 0x5353_4c53_5f73_6565),
            counter: 0,
        }
    }

    /// Independent child stream number `index`. Does not advance `self`.
    pub fn derive(&self, index: u64) -> Self {
        let a = mix64(self.key ^ mix64(index.wrapping_add(GAMMA)));
        StreamRng {
            key: mix64(a.wrapping_add(0x6a09_e667_f3bc_c909)),
            counter: 0,
        }
    }

    /// Child stream addressed by a path of indices, e.g. `(study, cell, rep)`.
    pub fn derive_path(&self, path: &[u64]) -> Self {
        path.iter().fold(self.clone(), |rng, &i| rng.derive(i))
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = StreamRng::new(42);
        let mut b = StreamRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derived_streams_differ_and_are_stable() {
        let root = StreamRng::new(7);
        let mut c0 = root.derive(0);
        let mut c1 = root.derive(1);
        assert_ne!(c0.next_u64(), c1.next_u64());
        // deriving does not consume the parent
        let mut again = root.derive(0);
        let mut c0b = root.derive(0);
        assert_eq!(again.next_u64(), c0b.next_u64());
        assert_eq!(root, StreamRng::new(7));
    }

    #[test]
    fn frozen_first_outputs() {
        // Pins the stream definition; a change here breaks reproducibility
        // of every stored study result.
        let mut r = StreamRng::new(0);
        let first = r.next_u64();
        let mut r2 = StreamRng::new(0);
        assert_eq!(first, r2.next_u64());
        let key = mix64(0x5353_4c53_5f73_6565);
        assert_eq!(first, mix64(key.wrapping_add(GAMMA)));
    }

    #[test]
    fn uniform_in_unit_interval_with_sane_mean() {
        let mut r = StreamRng::new(3);
        let n = 100_000;
        let mut s = 0.0;
        for _ in 0..n {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            s += u;
        }
        let mean = s / n as f64;
        // sd of the mean is 1/sqrt(12 n) ~ 0.0009
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
    }
}
