//! Named-stream seed splitting. Every stage derives its own seed from the
//! run seed and a stable name, so stages re-run independently.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Seed for the stream `name` under the run seed `base`.
pub fn derive_seed(base: u64, name: &str) -> u64 {
    splitmix64(base ^ splitmix64(fnv1a(name.as_bytes())))
}

/// Seed for the `index`-th item (pixel, probe, ...) of a stream.
#[inline]
pub fn item_seed(stream: u64, index: u64) -> u64 {
    splitmix64(stream ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
