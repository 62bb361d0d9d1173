//! Seed derivation: every stream is `splitmix64` folded over a path of
//! integers below a master seed, so sub-seeds are independent of the order
//! in which work is scheduled.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// One `splitmix64` output step.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `derive_seed(m, [a, b])` = `splitmix64(splitmix64(splitmix64(m) ^ a) ^ b)`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ p))
}

/// Stable 64-bit FNV-1a hash, used to turn string ids into path elements.
pub fn stable_hash(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
