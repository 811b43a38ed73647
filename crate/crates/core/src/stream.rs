//! Keyed random streams.
//!
//! Every tree node owns a stream derived from its replication key and its
//! address in the tree, so a node draws the same vector no matter how deep
//! the surrounding traversal goes or which worker runs it. Deeper runs of the
//! same replication therefore extend earlier runs sample-path by sample-path.

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Identity of an independent random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub const fn from_raw(raw: u64) -> Self {
        StreamKey(raw)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    /// Root stream of replication `index` under `seed`.
    pub fn replication(seed: u64, index: u64) -> Self {
        let s = mix64(seed ^ 0x5851_F42D_4C95_7F2D);
        StreamKey(mix64(s ^ mix64(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA))))
    }

    /// Stream of the `index`-th child (1-based in tree notation, any u64 here).
    #[inline]
    pub fn child(self, index: u64) -> Self {
        StreamKey(mix64(
            self.0 ^ mix64(index.wrapping_add(0x2545_F491_4F6C_DD1D).wrapping_mul(GOLDEN_GAMMA)),
        ))
    }

    /// Named substream, used to separate independent purposes under one seed.
    pub fn derive(self, label: &str) -> Self {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for &b in label.as_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        StreamKey(mix64(self.0 ^ mix64(h)))
    }

    #[inline]
    pub fn rng(self) -> SplitMix64 {
        SplitMix64::seed_from_u64(self.0)
    }
}
