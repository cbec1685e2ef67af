//! Named, index-addressable random substreams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by
//! `(seed, stream, indices...)`, so sampling work can be split across
//! workers without changing results, and toggling one component does not
//! shift another component's stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init,
    Train,
    Replay,
    Monitor,
    Guide,
    Theory,
    Reward,
    Eval,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Init => 0x1,
            Stream::Train => 0x2,
            Stream::Replay => 0x3,
            Stream::Monitor => 0x4,
            Stream::Guide => 0x5,
            Stream::Theory => 0x6,
            Stream::Reward => 0x7,
            Stream::Eval => 0x8,
        }
    }
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix(seed: u64, stream: Stream, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(stream.tag()));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0xA076_1D64_78BD_642F)));
    }
    h
}

pub fn substream(seed: u64, stream: Stream, indices: &[u64]) -> Rng {
    Rng::seed_from_u64(mix(seed, stream, indices))
}
