//! Deterministic RNG stream derivation.
//!
//! All randomness in the crate flows from one master seed. Subsystems get
//! disjoint streams addressed by a label and an index, so parallel work items
//! own their own generator and results never depend on scheduling or thread
//! count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(state: &mut u64) {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    *state = z ^ (z >> 31);
}

/// Mix (master seed, label, index) into a 256-bit ChaCha seed.
fn derive_seed(master: u64, label: &str, index: u64) -> [u8; 32] {
    // FNV-1a over the label, then splitmix rounds to spread entropy.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in label.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut state = master ^ h.rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        splitmix64(&mut state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    seed
}

/// A ChaCha8 stream for the given (master, label, index) address.
pub fn stream(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(master, label, index))
}

/// 128-bit content hash, hex-encoded; used for cache keys.
pub fn content_key(bytes: &[u8]) -> String {
    let mut a: u64 = 0x6a09_e667_f3bc_c908;
    let mut b: u64 = 0xbb67_ae85_84ca_a73b;
    for chunk in bytes.chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        let w = u64::from_le_bytes(word);
        a ^= w;
        splitmix64(&mut a);
        b = b.rotate_left(29) ^ a ^ w.wrapping_mul(0x2545_f491_4f6c_dd1d);
        splitmix64(&mut b);
    }
    format!("{a:016x}{b:016x}")
}
