//! Seed derivation for independent random substreams.
//!
//! Every random decision in the pipeline draws from a ChaCha stream whose
//! seed is derived from a parent seed and a short path of labels, so that
//! adding examples, grid points or threads never shifts another stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// One component of a derivation path.
#[derive(Debug, Clone, Copy)]
pub enum SeedPart<'a> {
    Tag(&'a str),
    Int(u64),
}

impl From<&'static str> for SeedPart<'static> {
    fn from(s: &'static str) -> Self {
        SeedPart::Tag(s)
    }
}

impl From<u64> for SeedPart<'_> {
    fn from(v: u64) -> Self {
        SeedPart::Int(v)
    }
}

impl From<usize> for SeedPart<'_> {
    fn from(v: usize) -> Self {
        SeedPart::Int(v as u64)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hash chain: `s_{i+1} = splitmix64(s_i ^ splitmix64(h(part_i)))`.
pub fn derive_seed(base: u64, path: &[SeedPart<'_>]) -> u64 {
    path.iter().fold(splitmix64(base), |acc, part| {
        let h = match part {
            SeedPart::Tag(s) => fnv1a(s.as_bytes()),
            SeedPart::Int(v) => splitmix64(*v ^ 0x5851_f42d_4c95_7f2d),
        };
        splitmix64(acc ^ splitmix64(h))
    })
}

pub fn stream(base: u64, path: &[SeedPart<'_>]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, path))
}
