//! Stable hashing for anything that must reproduce across builds and
//! platforms (n-gram buckets, OOV vectors, edge sampling).

const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const PRIME: u64 = 0x0000_0100_0000_01b3;

#[cfg(test)]
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Seeds an FNV-1a state with `seed` before hashing `bytes`.
pub fn fnv1a_seeded(seed: u64, bytes: &[u8]) -> u64 {
    let h = seed
        .to_le_bytes()
        .iter()
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME));
    bytes.iter().fold(h, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
