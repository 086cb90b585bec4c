//! Seed derivation.
//!
//! Every random stream in a run is keyed by the master seed plus a component
//! label and a list of indices. The key is hashed with SHA-256 and the first
//! eight bytes (little endian) become the stream seed:
//!
//! ```text
//! seed = LE64(SHA256("defersim/v1" || LE64(master) || len(label) || label || LE64(i0) || LE64(i1) ...))
//! ```
//!
//! Changing one index never perturbs any other stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const DOMAIN: &[u8] = b"defersim/v1";

pub fn derive(master: u64, label: &str, indices: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(DOMAIN);
    hasher.update(master.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    for i in indices {
        hasher.update(i.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}

/// Stable 64-bit key for a string identifier.
pub fn key_of(name: &str) -> u64 {
    derive(0, name, &[])
}

pub fn rng(master: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, label, indices))
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based uniform draw in [0, 1) for a (stream key, counter) pair.
#[inline]
pub fn uniform(key: u64, counter: u64) -> f64 {
    let bits = mix64(key ^ mix64(counter));
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
