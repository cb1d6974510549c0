//! Counter-based random streams.
//!
//! Every stream is a ChaCha8 keystream whose key is derived from the
//! global seed, the voxel's linear index and the algorithm, and whose
//! 64-bit stream id is the time index. Draws therefore depend only on that
//! tuple and never on the order in which voxels are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type DrawRng = ChaCha8Rng;

/// Purpose tag mixed into the key so that different consumers of the same
/// `(seed, voxel)` pair never share a keystream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamDomain {
    Fest,
    Ffbs,
    Fsts,
    Synth,
    /// Free-form tag for tests and ad hoc callers.
    Other(u64),
}

impl StreamDomain {
    fn tag(self) -> u64 {
        match self {
            StreamDomain::Fest => 1,
            StreamDomain::Ffbs => 2,
            StreamDomain::Fsts => 3,
            StreamDomain::Synth => 16,
            StreamDomain::Other(v) => 0x8000_0000_0000_0000 | v,
        }
    }
}

/// Builds the stream for `(seed, voxel, domain, time)`.
pub fn stream(seed: u64, voxel: u64, domain: StreamDomain, time: u64) -> DrawRng {
    let words = [
        mix64(seed ^ 0x6A09_E667_F3BC_C908),
        mix64(voxel ^ 0xBB67_AE85_84CA_A73B),
        mix64(domain.tag() ^ 0x3C6E_F372_FE94_F82B),
        mix64(seed.rotate_left(17) ^ voxel.rotate_left(41) ^ 0xA54F_F53A_5F1D_36F1),
    ];
    let mut key = [0u8; 32];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(time);
    rng
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
