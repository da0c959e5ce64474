use crate::diffusion::HashingEmbedder;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::instructor::analyze;

/// Learned perceptual distance between two images (LPIPS slot).
pub trait PerceptualBackend: Send + Sync {
    fn name(&self) -> &str;

    fn distance(&self, a: &Image, b: &Image) -> Result<f64>;
}

/// Shared image/text embedding space (CLIP slot).
pub trait EmbeddingBackend: Send + Sync {
    fn name(&self) -> &str;

    fn embed_image(&self, image: &Image) -> Result<Vec<f64>>;

    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
}

/// Deterministic stand-in: images are described with the flat-color scene
/// parser, and both sides are embedded as hashed unigram and bigram counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenEmbeddingBackend {
    pub dim: usize,
    pub tolerance: f64,
}

impl Default for TokenEmbeddingBackend {
    fn default() -> Self {
        Self { dim: 256, tolerance: 0.15 }
    }
}

impl TokenEmbeddingBackend {
    fn embed_tokens(&self, text: &str) -> Vec<f64> {
        let toks: Vec<String> = HashingEmbedder::tokens(text).collect();
        let mut v = vec![0.0; self.dim];
        let mut bump = |key: &str| {
            let h = crate::diffusion::fnv1a(key.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        };
        for t in &toks {
            bump(t);
        }
        for pair in toks.windows(2) {
            bump(&format!("{} {}", pair[0], pair[1]));
        }
        v
    }
}

impl EmbeddingBackend for TokenEmbeddingBackend {
    fn name(&self) -> &str {
        "token-stub"
    }

    fn embed_image(&self, image: &Image) -> Result<Vec<f64>> {
        Ok(self.embed_tokens(&analyze(image, self.tolerance).caption()))
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.embed_tokens(text))
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("embedding lengths {} vs {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity of image and caption embeddings.
pub fn text_alignment(image: &Image, caption: &str, backend: &dyn EmbeddingBackend) -> Result<f64> {
    cosine(&backend.embed_image(image)?, &backend.embed_text(caption)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{random_scene, SceneParams};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cosine_cases() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn matching_caption_beats_shuffled() {
        let backend = TokenEmbeddingBackend::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let s = random_scene(&mut rng, &SceneParams::default()).unwrap();
            let good = text_alignment(&s.image, &s.caption, &backend).unwrap();
            let mut words: Vec<&str> = s.caption.split(' ').collect();
            let original = words.clone();
            while words == original {
                words.shuffle(&mut rng);
            }
            let bad = text_alignment(&s.image, &words.join(" "), &backend).unwrap();
            assert!(good > bad, "{good} <= {bad} for {:?}", words.join(" "));
        }
    }
}
