//! Seed derivation. Every random stream in a run is derived from one master
//! seed, a stream label and an index, so work items can run in any order.

/// Environment variable that overrides the configured master seed.
pub const SEED_ENV: &str = "GRIDSTATE_SEED";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes.
fn label_hash(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xCBF2_9CE4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01B3))
}

/// `splitmix64(splitmix64(master ^ fnv1a(stream)) ^ index)`.
pub fn derive(master: u64, stream: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ label_hash(stream)) ^ index)
}

/// Master seed from `GRIDSTATE_SEED` when set and parseable, else `configured`.
pub fn master_seed(configured: u64) -> u64 {
    std::env::var(SEED_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(configured)
}
