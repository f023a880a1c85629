//! Exact inner-product index over normalized segment embeddings.

use std::cmp::Ordering;

use thiserror::Error;

use crate::embed::{check_batch, EmbedError, Embedder, Embedding};
use crate::ingest::LectureSegment;

/// Segments embedded per adapter call during index builds.
pub const EMBED_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("query has dimension {got}, index has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("top-K must be at least 1")]
    ZeroK,
    #[error("cannot build an index from zero segments")]
    NoSegments,
    #[error("row {row} has norm {norm}, expected 1")]
    NotNormalized { row: usize, norm: f32 },
    #[error("{rows} rows but {ids} ids")]
    RowCount { rows: usize, ids: usize },
    #[error("embedding segment {segment_id} failed: {source}")]
    Embed {
        segment_id: String,
        #[source]
        source: EmbedError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub row: usize,
    pub segment_id: String,
    pub score: f32,
}

/// Row-major `N x d` matrix of unit vectors with one segment id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dimension: usize,
    data: Vec<f32>,
    ids: Vec<String>,
}

impl VectorIndex {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            data: Vec::new(),
            ids: Vec::new(),
        }
    }

    /// Builds an index from a flat row-major buffer.
    pub fn from_parts(dimension: usize, data: Vec<f32>, ids: Vec<String>) -> Result<Self, IndexError> {
        if dimension == 0 || data.len() != ids.len() * dimension {
            return Err(IndexError::RowCount {
                rows: data.len().checked_div(dimension).unwrap_or(0),
                ids: ids.len(),
            });
        }
        let index = Self { dimension, data, ids };
        for row in 0..index.len() {
            let e = Embedding::from_raw(index.row(row).to_vec());
            if !e.is_normalized() {
                return Err(IndexError::NotNormalized { row, norm: e.norm() });
            }
        }
        Ok(index)
    }

    pub fn push(&mut self, segment_id: impl Into<String>, vector: &Embedding) -> Result<(), IndexError> {
        if vector.dimension() != self.dimension {
            return Err(IndexError::Dimension {
                expected: self.dimension,
                got: vector.dimension(),
            });
        }
        if !vector.is_normalized() {
            return Err(IndexError::NotNormalized {
                row: self.len(),
                norm: vector.norm(),
            });
        }
        self.data.extend_from_slice(vector.as_slice());
        self.ids.push(segment_id.into());
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dimension..(row + 1) * self.dimension]
    }

    /// Exact top-K by inner product; ties go to the smaller segment id.
    pub fn search_top_k(&self, query: &Embedding, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        self.search_top_k_where(query, k, |_| true)
    }

    /// Like [`search_top_k`](Self::search_top_k) but only over rows accepted
    /// by `keep`. Equivalent to ranking every row and then filtering.
    pub fn search_top_k_where(
        &self,
        query: &Embedding,
        k: usize,
        keep: impl Fn(usize) -> bool,
    ) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.dimension() != self.dimension {
            return Err(IndexError::Dimension {
                expected: self.dimension,
                got: query.dimension(),
            });
        }
        let q = query.as_slice();
        let mut scored: Vec<(f32, usize)> = (0..self.len())
            .filter(|&row| keep(row))
            .map(|row| (inner_product(self.row(row), q), row))
            .collect();

        let rank = |a: &(f32, usize), b: &(f32, usize)| -> Ordering {
            b.0.total_cmp(&a.0).then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, rank);
            scored.truncate(k);
        }
        scored.sort_unstable_by(rank);

        Ok(scored
            .into_iter()
            .map(|(score, row)| SearchHit {
                row,
                segment_id: self.ids[row].clone(),
                score,
            })
            .collect())
    }
}

/// Inner product accumulated in `f64` in index order, rounded to `f32`.
/// The fixed summation order makes scores bit-reproducible.
pub fn inner_product(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0f64, |acc, (x, y)| acc + f64::from(*x) * f64::from(*y)) as f32
}

/// Embeds every segment in batches and stacks the vectors into an index.
pub fn build_index(segments: &[LectureSegment], embedder: &dyn Embedder) -> Result<VectorIndex, IndexError> {
    if segments.is_empty() {
        return Err(IndexError::NoSegments);
    }
    let mut index = VectorIndex::new(embedder.dimension());
    for chunk in segments.chunks(EMBED_BATCH) {
        let texts: Vec<&str> = chunk.iter().map(|s| s.text.as_str()).collect();
        let vectors = embedder
            .embed_batch(&texts)
            .and_then(|v| check_batch(embedder, texts.len(), &v).map(|_| v))
            .map_err(|source| locate_failure(chunk, embedder, source))?;
        for (seg, vector) in chunk.iter().zip(vectors) {
            let vector = if vector.is_normalized() {
                vector
            } else {
                Embedding::normalized(vector.into_inner())
            };
            index.push(seg.segment_id.clone(), &vector)?;
        }
    }
    Ok(index)
}

// Re-embeds a failed batch one text at a time to name the culprit.
fn locate_failure(chunk: &[LectureSegment], embedder: &dyn Embedder, batch_err: EmbedError) -> IndexError {
    for seg in chunk {
        let single = embedder
            .embed_batch(&[seg.text.as_str()])
            .and_then(|v| check_batch(embedder, 1, &v));
        if let Err(source) = single {
            return IndexError::Embed {
                segment_id: seg.segment_id.clone(),
                source,
            };
        }
    }
    IndexError::Embed {
        segment_id: chunk[0].segment_id.clone(),
        source: batch_err,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{stub_embed, StubEmbedder};

    fn seg(id: &str, text: &str) -> LectureSegment {
        LectureSegment {
            segment_id: id.into(),
            lecture_id: "l".into(),
            start: 0.0,
            end: 1.0,
            text: text.into(),
        }
    }

    #[test]
    fn single_row_finds_itself() {
        let emb = StubEmbedder::new(32);
        let index = build_index(&[seg("a", "only")], &emb).unwrap();
        let hits = index.search_top_k(&stub_embed("only", 32), 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].segment_id, "a");
        assert!((hits[0].score - 1.0).abs() <= 1e-5);
    }

    #[test]
    fn duplicates_tie_by_id() {
        let emb = StubEmbedder::new(32);
        let index = build_index(&[seg("b", "same"), seg("a", "same"), seg("c", "other")], &emb).unwrap();
        assert_eq!(index.row(0), index.row(1));
        let hits = index.search_top_k(&stub_embed("same", 32), 2).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.segment_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(hits[0].score, hits[1].score);
    }

    #[test]
    fn k_larger_than_n_returns_all() {
        let emb = StubEmbedder::new(16);
        let index = build_index(&[seg("a", "x"), seg("b", "y")], &emb).unwrap();
        assert_eq!(index.search_top_k(&stub_embed("z", 16), 10).unwrap().len(), 2);
    }

    #[test]
    fn contract_errors() {
        let emb = StubEmbedder::new(16);
        let index = build_index(&[seg("a", "x")], &emb).unwrap();
        assert!(matches!(
            index.search_top_k(&stub_embed("x", 8), 1),
            Err(IndexError::Dimension { expected: 16, got: 8 })
        ));
        assert!(matches!(index.search_top_k(&stub_embed("x", 16), 0), Err(IndexError::ZeroK)));
        assert!(matches!(build_index(&[], &emb), Err(IndexError::NoSegments)));
    }

    struct Flaky;
    impl Embedder for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn dimension(&self) -> usize {
            8
        }
        fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
            if texts.contains(&"boom") {
                return Err(EmbedError::Backend("boom".into()));
            }
            Ok(texts.iter().map(|t| stub_embed(t, 8)).collect())
        }
    }

    #[test]
    fn build_failure_names_segment() {
        let segs = [seg("s0", "fine"), seg("s1", "boom"), seg("s2", "ok")];
        match build_index(&segs, &Flaky) {
            Err(IndexError::Embed { segment_id, .. }) => assert_eq!(segment_id, "s1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn from_parts_checks_shape_and_norm() {
        assert!(VectorIndex::from_parts(2, vec![1.0, 0.0, 0.0], vec!["a".into()]).is_err());
        assert!(matches!(
            VectorIndex::from_parts(2, vec![2.0, 0.0], vec!["a".into()]),
            Err(IndexError::NotNormalized { row: 0, .. })
        ));
        assert!(VectorIndex::from_parts(2, vec![0.6, 0.8], vec!["a".into()]).is_ok());
    }
}
