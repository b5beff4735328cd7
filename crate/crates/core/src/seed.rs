//! Deterministic seed derivation.
//!
//! Every stochastic component takes its randomness from a caller-supplied
//! seed combined with stable labels (entity ids, rep indices, segment
//! bounds). The mixing function must be stable across platforms and releases
//! so archived run manifests stay reproducible; do not swap it for
//! `DefaultHasher`.

/// SplitMix64 finalizer. Good avalanche behavior, trivially portable.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of labels into a base seed.
pub fn mix(base: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix64(base);
    for &p in parts {
        state = splitmix64(state ^ p);
    }
    state
}

/// Folds a string label (FNV-1a over bytes) into a base seed.
pub fn mix_str(base: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(base, &[h])
}
