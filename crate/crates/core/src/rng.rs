//! Counter-based seed splitting.
//!
//! Every random draw in the crate comes from a [`SeedStream`] rooted at one
//! 64-bit seed. A stream hands out ChaCha8 generators keyed by `(label, index)`:
//! the root seed fixes the key and the label/index pair selects the ChaCha
//! stream, so draws for sample `i` never depend on how many other samples were
//! drawn before it or on which thread drew them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator for the `(label, index)` counter.
    pub fn rng(&self, label: &str, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream_id(label, index));
        rng
    }

    /// Independent sub-stream, e.g. one per training run inside a sweep.
    pub fn child(&self, label: &str, index: u64) -> SeedStream {
        SeedStream::new(splitmix64(self.seed ^ stream_id(label, index)))
    }
}

fn stream_id(label: &str, index: u64) -> u64 {
    // FNV-1a over the label, then mix in the counter.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
