//! Named, reproducible random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the master seed. The stream
//! name selects the ChaCha stream id (a 64-bit nonce), so sub-streams share a
//! key but never overlap: splitting is counter-based, not sequential.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A reproducible random stream identified by `(seed, name)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    name: String,
    rng: ChaCha8Rng,
}

/// FNV-1a over the stream name; stable across platforms and releases.
fn stream_id(name: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl RngStream {
    pub fn new(seed: u64, name: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id(name));
        RngStream {
            seed,
            name: name.to_owned(),
            rng,
        }
    }

    /// Derive an independent child stream named `<parent>/<child>`.
    pub fn substream(&self, child: &str) -> RngStream {
        RngStream::new(self.seed, &format!("{}/{}", self.name, child))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl RngCore for RngStream {
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

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_and_name_reproduce() {
        let mut a = RngStream::new(7, "fading");
        let mut b = RngStream::new(7, "fading");
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn names_and_seeds_separate_streams() {
        let first = |seed, name| RngStream::new(seed, name).next_u64();
        assert_ne!(first(7, "fading"), first(7, "harq"));
        assert_ne!(first(7, "fading"), first(8, "fading"));
        let parent = RngStream::new(7, "slicing");
        assert_ne!(parent.substream("a").next_u64(), parent.substream("b").next_u64());
    }

    #[test]
    fn sibling_streams_are_uncorrelated() {
        let mut a = RngStream::new(1, "a");
        let mut b = RngStream::new(1, "b");
        let n = 100_000;
        let (mut sab, mut sa, mut sb) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let x: f64 = a.random::<f64>() - 0.5;
            let y: f64 = b.random::<f64>() - 0.5;
            sab += x * y;
            sa += x * x;
            sb += y * y;
        }
        let corr = sab / (sa.sqrt() * sb.sqrt());
        assert!(corr.abs() < 0.01, "correlation {corr}");
    }
}
