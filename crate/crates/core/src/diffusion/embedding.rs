use serde::{Deserialize, Serialize};

/// Fixed-length caption embedding consumed by the denoiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEmbedding(pub Vec<f64>);

impl ConditionEmbedding {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Maps caption text to a [`ConditionEmbedding`].
pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, caption: &str) -> ConditionEmbedding;
}

/// Conditional and unconditional embeddings for one guided sampling run.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub cond: ConditionEmbedding,
    pub uncond: ConditionEmbedding,
}

impl Conditioning {
    /// The unconditional branch uses the embedding of the empty caption.
    pub fn from_caption(embedder: &dyn TextEmbedder, caption: &str) -> Self {
        Self {
            cond: embedder.embed(caption),
            uncond: embedder.embed(""),
        }
    }
}

/// Signed feature-hashing bag of words, L2 normalized.
///
/// Stop words are dropped so that captions differing only in articles embed
/// identically. The empty caption maps to the zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashingEmbedder {
    pub dim: usize,
}

const STOP_WORDS: &[&str] = &["a", "an", "the", "and", "of", "on", "with", "in", "to"];

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .filter(|w| !STOP_WORDS.contains(&w.as_str()))
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: 32 }
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl TextEmbedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, caption: &str) -> ConditionEmbedding {
        let mut v = vec![0.0; self.dim];
        if self.dim == 0 {
            return ConditionEmbedding(v);
        }
        for tok in Self::tokens(caption) {
            let h = fnv1a(tok.as_bytes());
            let idx = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
            v[idx] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        ConditionEmbedding(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_caption_is_zero() {
        let e = HashingEmbedder::new(16);
        assert_eq!(e.embed(""), ConditionEmbedding::zeros(16));
        assert_eq!(e.embed("  the a "), ConditionEmbedding::zeros(16));
    }

    #[test]
    fn deterministic_and_normalized() {
        let e = HashingEmbedder::new(16);
        let a = e.embed("a red circle on a white background");
        assert_eq!(a, e.embed("A red circle, on the white background"));
        let n: f64 = a.0.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
        assert_ne!(a, e.embed("a blue square on a white background"));
    }
}
