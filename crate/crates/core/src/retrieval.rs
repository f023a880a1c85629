//! Timestamp-aware retrieval.
//!
//! A question asked at pause time `t` is embedded, the `top_K` nearest
//! segments by inner product are fetched, and each candidate's score is
//! penalized by `lambda` per minute between its midpoint and `t`:
//!
//! ```text
//! adjusted = semantic - lambda * |(start + end) / 2 - t| / 60
//! ```
//!
//! The `top_k` candidates by adjusted score become the answer's evidence.
//! Only the semantic top-K set is rescored; a segment outside it is never
//! returned, however close to `t` it is.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::embed::{EmbedError, Embedder, Embedding};
use crate::index::IndexError;
use crate::ingest::LectureSegment;
use crate::store::RagStore;

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_TOP_K_CANDIDATES: usize = 20;
pub const DEFAULT_TOP_K_EVIDENCE: usize = 4;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("pause time must be a non-negative number of seconds, got {0}")]
    PauseTime(f64),
    #[error("invalid retrieval config: {0}")]
    Config(String),
    #[error("store was indexed with embedder {store} but the query embedder is {query}")]
    EmbedderMismatch { store: String, query: String },
    #[error("unknown lecture {0}")]
    UnknownLecture(String),
    #[error("embedding the question failed: {0}")]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryContext {
    pub question: String,
    pub pause_time: f64,
    #[serde(default)]
    pub lecture_id: Option<String>,
}

impl QueryContext {
    pub fn new(question: impl Into<String>, pause_time: f64) -> Self {
        Self {
            question: question.into(),
            pause_time,
            lecture_id: None,
        }
    }

    pub fn in_lecture(mut self, lecture_id: impl Into<String>) -> Self {
        self.lecture_id = Some(lecture_id.into());
        self
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.question.trim().is_empty() {
            return Err(RetrievalError::EmptyQuestion);
        }
        if !(self.pause_time.is_finite() && self.pause_time >= 0.0) {
            return Err(RetrievalError::PauseTime(self.pause_time));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Score penalty per minute of distance from the pause time.
    pub lambda: f64,
    /// Semantic candidates fetched before rescoring.
    #[serde(rename = "top_K")]
    pub candidates: usize,
    /// Segments kept after rescoring.
    #[serde(rename = "top_k")]
    pub evidence: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            candidates: DEFAULT_TOP_K_CANDIDATES,
            evidence: DEFAULT_TOP_K_EVIDENCE,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(RetrievalError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.evidence == 0 {
            return Err(RetrievalError::Config("top_k must be at least 1".into()));
        }
        if self.evidence > self.candidates {
            return Err(RetrievalError::Config(format!(
                "top_k ({}) exceeds top_K ({})",
                self.evidence, self.candidates
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredSegment {
    pub segment: LectureSegment,
    pub semantic_score: f64,
    pub adjusted_score: f64,
    pub midpoint: f64,
}

pub fn midpoint(segment: &LectureSegment) -> f64 {
    (segment.start + segment.end) / 2.0
}

/// `semantic - lambda * |midpoint - t| / 60`.
pub fn adjusted_score(semantic: f64, midpoint: f64, pause_time: f64, lambda: f64) -> f64 {
    semantic - lambda * ((midpoint - pause_time).abs() / 60.0)
}

/// Final ranking: adjusted score descending, then semantic score
/// descending, then segment id ascending.
pub fn rank_order(a: &ScoredSegment, b: &ScoredSegment) -> Ordering {
    b.adjusted_score
        .total_cmp(&a.adjusted_score)
        .then_with(|| b.semantic_score.total_cmp(&a.semantic_score))
        .then_with(|| a.segment.segment_id.cmp(&b.segment.segment_id))
}

/// Applies the temporal penalty to every candidate and sorts the result.
pub fn temporal_rescore(
    candidates: impl IntoIterator<Item = (LectureSegment, f64)>,
    pause_time: f64,
    lambda: f64,
) -> Vec<ScoredSegment> {
    let mut scored: Vec<ScoredSegment> = candidates
        .into_iter()
        .map(|(segment, semantic_score)| {
            let mid = midpoint(&segment);
            ScoredSegment {
                adjusted_score: adjusted_score(semantic_score, mid, pause_time, lambda),
                semantic_score,
                midpoint: mid,
                segment,
            }
        })
        .collect();
    scored.sort_by(rank_order);
    scored
}

/// Checks that `embedder` is the one the store was indexed with.
pub fn check_embedder(store: &RagStore, embedder: &dyn Embedder) -> Result<(), RetrievalError> {
    let meta = store.metadata();
    if embedder.name() != meta.embedder_name || embedder.dimension() != meta.dimension {
        return Err(RetrievalError::EmbedderMismatch {
            store: format!("{}/{}", meta.embedder_name, meta.dimension),
            query: format!("{}/{}", embedder.name(), embedder.dimension()),
        });
    }
    Ok(())
}

/// Full retrieval: embed, semantic top-K, optional lecture filter, temporal
/// rescoring, top-k.
pub fn retrieve(
    store: &RagStore,
    embedder: &dyn Embedder,
    ctx: &QueryContext,
    cfg: &RetrievalConfig,
) -> Result<Vec<ScoredSegment>, RetrievalError> {
    ctx.validate()?;
    cfg.validate()?;
    check_embedder(store, embedder)?;
    if let Some(lecture) = &ctx.lecture_id {
        if !store.has_lecture(lecture) {
            return Err(RetrievalError::UnknownLecture(lecture.clone()));
        }
    }
    if store.is_empty() {
        warn!("retrieval against an empty store");
        return Ok(Vec::new());
    }
    let query = embedder.embed(&ctx.question)?;
    retrieve_with_vector(store, &query, ctx, cfg)
}

/// Retrieval with an already-embedded question.
pub fn retrieve_with_vector(
    store: &RagStore,
    query: &Embedding,
    ctx: &QueryContext,
    cfg: &RetrievalConfig,
) -> Result<Vec<ScoredSegment>, RetrievalError> {
    let segments = store.segments();
    // Filtering inside the scan gives the same ranking as over-fetching every
    // row and dropping other lectures afterwards.
    let hits = match &ctx.lecture_id {
        Some(lecture) => store
            .index()
            .search_top_k_where(query, cfg.candidates, |row| &segments[row].lecture_id == lecture)?,
        None => store.index().search_top_k(query, cfg.candidates)?,
    };
    let candidates = hits
        .into_iter()
        .map(|hit| (segments[hit.row].clone(), f64::from(hit.score)));
    let mut ranked = temporal_rescore(candidates, ctx.pause_time, cfg.lambda);
    ranked.truncate(cfg.evidence);
    Ok(ranked)
}
