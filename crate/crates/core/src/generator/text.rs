//! Bag-of-tokens caption encoder standing in for a learned text encoder.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub const DEFAULT_TEXT_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmbedding {
    pub vector: Vec<f64>,
}

impl TextEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// FNV-1a, 64-bit. Stable across platforms and releases, unlike `DefaultHasher`.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lowercases, splits on whitespace, counts tokens into `dim` hash buckets and
/// L2-normalizes the counts.
pub fn encode_text(caption: &str, dim: usize) -> Result<TextEmbedding> {
    ensure(dim > 0, || "embedding dimension must be positive".into())?;
    ensure(!caption.trim().is_empty(), || "cannot encode an empty caption".into())?;
    let mut vector = vec![0.0; dim];
    for token in caption.to_lowercase().split_whitespace() {
        let bucket = (fnv1a(token.as_bytes()) % dim as u64) as usize;
        vector[bucket] += 1.0;
    }
    let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut vector {
        *v /= norm;
    }
    Ok(TextEmbedding { vector })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn deterministic_and_order_free() {
        let a = encode_text("a white ball", 64).unwrap();
        assert_eq!(a, encode_text("a white ball", 64).unwrap());
        assert_eq!(encode_text("a b", 64).unwrap(), encode_text("b a", 64).unwrap());
        assert_eq!(encode_text("A  B", 64).unwrap(), encode_text("a b", 64).unwrap());
    }

    #[test]
    fn empty_rejected() {
        assert!(encode_text("", 64).is_err());
        assert!(encode_text(" \t\n", 64).is_err());
    }

    proptest! {
        #[test]
        fn unit_norm(caption in "[a-zA-Z0-9 ,.]{0,60}[a-z]") {
            let e = encode_text(&caption, 64).unwrap();
            prop_assert!((e.norm() - 1.0).abs() <= 1e-6);
            prop_assert!(e.vector.iter().all(|v| v.is_finite()));
        }
    }
}
