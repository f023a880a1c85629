//! Embedding vectors and the embedder adapter contract.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Tolerance on the unit-norm invariant.
pub const NORM_TOLERANCE: f32 = 1e-5;

/// Smallest dimension the built-in stub embedders accept.
pub const MIN_STUB_DIMENSION: usize = 8;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedder {name} returned dimension {got}, expected {expected}")]
    Dimension {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("embedder returned {got} vectors for {expected} texts")]
    BatchSize { expected: usize, got: usize },
    #[error("embedder backend failed: {0}")]
    Backend(String),
}

/// A dense `f32` embedding, normalized to unit length unless degenerate
/// (all zeros).
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// Normalizes `values` to unit length. An all-zero input stays all zero.
    pub fn normalized(mut values: Vec<f32>) -> Self {
        let norm = values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v = (f64::from(*v) / norm) as f32;
            }
        }
        Self(values)
    }

    /// Wraps already-normalized values without touching them.
    pub fn from_raw(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f32 {
        self.0.iter().map(|v| v * v).sum::<f32>().sqrt()
    }

    pub fn is_degenerate(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn is_normalized(&self) -> bool {
        self.is_degenerate() || (self.norm() - 1.0).abs() <= NORM_TOLERANCE
    }
}

/// Text-to-vector adapter.
///
/// Implementations must be deterministic: the same text always yields the
/// same vector, with exactly [`Embedder::dimension`] components.
pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;

    fn dimension(&self) -> usize;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError>;

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        let mut out = self.embed_batch(&[text])?;
        match out.len() {
            1 => Ok(out.pop().unwrap()),
            got => Err(EmbedError::BatchSize { expected: 1, got }),
        }
    }

    /// Adapters that cannot take concurrent calls return true; callers then
    /// route requests through a single lock.
    fn serialized(&self) -> bool {
        false
    }
}

/// Lowercases and collapses runs of whitespace to single spaces.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// 64-bit FNV-1a over the given bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Deterministic pseudo-random embedding of `text`.
///
/// The text is lowercased and whitespace-normalized, hashed with 64-bit
/// FNV-1a, and the hash seeds a ChaCha8 stream. Each component is the next
/// `u32` of that stream mapped onto `[-1, 1)`; the vector is then scaled to
/// unit length. The output depends only on the normalized text and the
/// dimension, so it is identical across runs and platforms.
pub fn stub_embed(text: &str, dimension: usize) -> Embedding {
    let seed = fnv1a64(normalize_text(text).as_bytes());
    Embedding::normalized(random_unit_components(seed, dimension))
}

fn random_unit_components(seed: u64, dimension: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dimension)
        .map(|_| (f64::from(rng.next_u32()) / 2f64.powi(31) - 1.0) as f32)
        .collect()
}

/// Hash-seeded random embedder. Only identical (normalized) texts are
/// similar; everything else is close to orthogonal.
#[derive(Debug, Clone)]
pub struct StubEmbedder {
    dimension: usize,
}

impl StubEmbedder {
    pub const NAME: &'static str = "stub";

    pub fn new(dimension: usize) -> Self {
        assert!(
            dimension >= MIN_STUB_DIMENSION,
            "stub embedder needs dimension >= {MIN_STUB_DIMENSION}"
        );
        Self { dimension }
    }
}

impl Embedder for StubEmbedder {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        Ok(texts.iter().map(|t| stub_embed(t, self.dimension)).collect())
    }
}

/// Bag-of-words variant of the stub: the sum of per-token stub vectors,
/// normalized. Texts sharing words get positive similarity, which makes
/// offline demos behave sensibly without a real model.
#[derive(Debug, Clone)]
pub struct BagOfWordsEmbedder {
    dimension: usize,
}

impl BagOfWordsEmbedder {
    pub const NAME: &'static str = "stub-bow";

    pub fn new(dimension: usize) -> Self {
        assert!(
            dimension >= MIN_STUB_DIMENSION,
            "bag-of-words embedder needs dimension >= {MIN_STUB_DIMENSION}"
        );
        Self { dimension }
    }

    fn embed_one(&self, text: &str) -> Embedding {
        let mut acc = vec![0f64; self.dimension];
        let normalized = normalize_text(text);
        let tokens = normalized
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty());
        for token in tokens {
            let comps = random_unit_components(fnv1a64(token.as_bytes()), self.dimension);
            for (a, c) in acc.iter_mut().zip(comps) {
                *a += f64::from(c);
            }
        }
        Embedding::normalized(acc.into_iter().map(|v| v as f32).collect())
    }
}

impl Embedder for BagOfWordsEmbedder {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Checks an adapter's batch output against its declared contract.
pub fn check_batch(
    embedder: &dyn Embedder,
    expected: usize,
    vectors: &[Embedding],
) -> Result<(), EmbedError> {
    if vectors.len() != expected {
        return Err(EmbedError::BatchSize {
            expected,
            got: vectors.len(),
        });
    }
    if let Some(bad) = vectors.iter().find(|v| v.dimension() != embedder.dimension()) {
        return Err(EmbedError::Dimension {
            name: embedder.name().to_string(),
            expected: embedder.dimension(),
            got: bad.dimension(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_is_deterministic() {
        let a = stub_embed("hello", 384);
        let b = stub_embed("hello", 384);
        assert_eq!(a.as_slice(), b.as_slice());
        let bits = |e: &Embedding| e.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn stub_normalizes_text() {
        assert_eq!(stub_embed("hello", 384), stub_embed("Hello ", 384));
        assert_eq!(stub_embed("a  b\tC", 64), stub_embed("A b c", 64));
        assert_ne!(stub_embed("hello", 384), stub_embed("hullo", 384));
    }

    #[test]
    fn stub_is_unit_norm() {
        for text in ["", "x", "filtered backprojection", "ünïcödé"] {
            let e = stub_embed(text, 384);
            assert!((e.norm() - 1.0).abs() <= NORM_TOLERANCE, "{text}");
            assert_eq!(e.dimension(), 384);
        }
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn zero_vector_stays_degenerate() {
        let e = Embedding::normalized(vec![0.0; 8]);
        assert!(e.is_degenerate());
        assert!(e.is_normalized());
    }

    #[test]
    fn bag_of_words_rewards_overlap() {
        let emb = BagOfWordsEmbedder::new(256);
        let dot = |a: &Embedding, b: &Embedding| -> f32 {
            a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
        };
        let q = emb.embed("what is a ramp filter").unwrap();
        let near = emb.embed("the ramp filter sharpens projections").unwrap();
        let far = emb.embed("magnetic resonance relaxation times").unwrap();
        assert!(dot(&q, &near) > dot(&q, &far));
        assert!((q.norm() - 1.0).abs() <= NORM_TOLERANCE);
    }

    #[test]
    fn batch_check_flags_wrong_dimension() {
        let emb = StubEmbedder::new(16);
        let wrong = vec![stub_embed("x", 8)];
        assert!(matches!(
            check_batch(&emb, 1, &wrong),
            Err(EmbedError::Dimension { got: 8, .. })
        ));
        assert!(matches!(
            check_batch(&emb, 2, &wrong),
            Err(EmbedError::BatchSize { .. })
        ));
    }
}
