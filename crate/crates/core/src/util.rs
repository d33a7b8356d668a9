//! Seeding, hashing, and counting helpers shared across the pipeline.
//!
//! All randomness in the crate flows through `ChaCha8Rng` seeded from a
//! master seed via `mix`, so every stage is reproducible and resumable
//! without carrying RNG state between iterations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over raw bytes. Stable across platforms and releases, unlike the
/// standard library's default hasher.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Hashes a string with the same stable FNV-1a used for seed mixing.
pub fn hash_str(s: &str) -> u64 {
    fnv1a64(s.as_bytes())
}

/// Derives a sub-seed from a master seed and a list of labels or counters.
/// Counter-based derivation keeps every stage independent of call order.
pub fn mix(master: u64, parts: &[u64]) -> u64 {
    let mut buf = Vec::with_capacity(8 * (parts.len() + 1));
    buf.extend_from_slice(&master.to_le_bytes());
    for p in parts {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    fnv1a64(&buf)
}

/// The crate-wide deterministic RNG.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Ceiling of `fraction * n`, guarded against float fuzz so that e.g.
/// 0.1 * 10 yields 1 rather than 2 (0.1 * 10 is slightly above 1.0 in f64).
/// Fractions below 1e-9 collapse to 0; callers validate ranges upstream.
pub fn ceil_frac(fraction: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let raw = fraction * n as f64;
    let m = (raw - 1e-9).ceil().max(0.0) as usize;
    m.min(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn fnv_is_stable() {
        // Reference value for the empty input is the FNV-1a offset basis.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_ne!(fnv1a64(b"a"), fnv1a64(b"b"));
    }

    #[test]
    fn mix_separates_counters() {
        let a = mix(7, &[hash_str("select"), 1]);
        let b = mix(7, &[hash_str("select"), 2]);
        let c = mix(7, &[hash_str("augment"), 1]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, mix(7, &[hash_str("select"), 1]));
    }

    #[test]
    fn rng_is_deterministic() {
        let mut r1 = rng(42);
        let mut r2 = rng(42);
        for _ in 0..16 {
            assert_eq!(r1.next_u64(), r2.next_u64());
        }
    }

    #[test]
    fn ceil_frac_handles_float_fuzz() {
        assert_eq!(ceil_frac(0.1, 10), 1);
        assert_eq!(ceil_frac(0.5, 9), 5);
        assert_eq!(ceil_frac(0.5, 8), 4);
        assert_eq!(ceil_frac(1.0, 7), 7);
        assert_eq!(ceil_frac(0.3, 10), 3);
        assert_eq!(ceil_frac(0.2, 10), 2);
        assert_eq!(ceil_frac(0.01, 1), 1);
        assert_eq!(ceil_frac(0.5, 0), 0);
    }
}
