//! Local interactive-lecture engine.
//!
//! Subtitle files are merged into timestamped segments ([`ingest`]),
//! embedded into an exact inner-product index ([`index`], [`store`]), and
//! searched with a pause-time bias ([`retrieval`]). Answers are produced by a
//! pluggable language model over a grounded prompt ([`qa`]) and can be
//! delivered as sequentially preloaded avatar clips ([`avatar`]).

pub mod audio;
pub mod avatar;
pub mod embed;
pub mod index;
pub mod ingest;
pub mod latency;
pub mod qa;
pub mod retrieval;
pub mod store;

pub use embed::{BagOfWordsEmbedder, Embedder, Embedding, StubEmbedder};
pub use index::VectorIndex;
pub use ingest::{LectureSegment, SegmentationConfig, SubtitleEntry};
pub use latency::{LatencyReport, Stage};
pub use retrieval::{QueryContext, RetrievalConfig, ScoredSegment};
pub use store::{load_store, save_store, RagStore, StoreMetadata};
