//! Deterministic seed derivation.

/// SplitMix64 finalizer over `base` mixed with `stream`.
pub fn derive(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    #[test]
    fn streams_differ() {
        assert_ne!(super::derive(1, 0), super::derive(1, 1));
        assert_eq!(super::derive(5, 9), super::derive(5, 9));
    }
}
