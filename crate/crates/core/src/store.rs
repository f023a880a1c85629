//! On-disk RAG store: embedding matrix, segment records and metadata.
//!
//! Layout of a store directory:
//!
//! * `vectors.f32`    row-major little-endian `f32`, `N * d` values
//! * `segments.jsonl` one record per row, in row order
//! * `meta.json`      [`StoreMetadata`]

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embed::Embedder;
use crate::index::{build_index, IndexError, VectorIndex};
use crate::ingest::{LectureSegment, SegmentationConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const VECTORS_FILE: &str = "vectors.f32";
pub const SEGMENTS_FILE: &str = "segments.jsonl";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("store is missing {0}")]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported store format_version {found} (this build reads {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("{VECTORS_FILE} holds {values} values, expected {rows} rows x {dimension} dims")]
    VectorShape {
        values: usize,
        rows: usize,
        dimension: usize,
    },
    #[error("segment id {0} appears more than once")]
    DuplicateId(String),
    #[error("metadata lecture_ids {declared:?} do not match segments {found:?}")]
    LectureIds {
        declared: Vec<String>,
        found: Vec<String>,
    },
    #[error("metadata dimension {meta} does not match index dimension {index}")]
    Dimension { meta: usize, index: usize },
    #[error("store was segmented with max_span {store}, requested {requested}")]
    MaxSpan { store: f64, requested: f64 },
    #[error("store was built with embedder {store}, got {requested}")]
    EmbedderMismatch { store: String, requested: String },
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreMetadata {
    pub embedder_name: String,
    pub dimension: usize,
    pub max_span: f64,
    pub created_at: DateTime<Utc>,
    pub lecture_ids: Vec<String>,
    pub format_version: u32,
}

/// Immutable retrieval store. Row `i` of the index belongs to `segments[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RagStore {
    index: VectorIndex,
    segments: Vec<LectureSegment>,
    by_id: HashMap<String, usize>,
    metadata: StoreMetadata,
}

impl RagStore {
    /// Assembles a store and checks its cross-file invariants.
    pub fn new(index: VectorIndex, segments: Vec<LectureSegment>, metadata: StoreMetadata) -> Result<Self, StoreError> {
        if metadata.format_version != FORMAT_VERSION {
            return Err(StoreError::Version {
                found: metadata.format_version,
            });
        }
        if metadata.dimension != index.dimension() {
            return Err(StoreError::Dimension {
                meta: metadata.dimension,
                index: index.dimension(),
            });
        }
        if index.len() != segments.len() {
            return Err(IndexError::RowCount {
                rows: index.len(),
                ids: segments.len(),
            }
            .into());
        }
        let mut by_id = HashMap::with_capacity(segments.len());
        for (row, (seg, id)) in segments.iter().zip(index.ids()).enumerate() {
            if &seg.segment_id != id {
                return Err(IndexError::RowCount {
                    rows: index.len(),
                    ids: segments.len(),
                }
                .into());
            }
            if by_id.insert(seg.segment_id.clone(), row).is_some() {
                return Err(StoreError::DuplicateId(seg.segment_id.clone()));
            }
        }
        let found: BTreeSet<&str> = segments.iter().map(|s| s.lecture_id.as_str()).collect();
        let declared: BTreeSet<&str> = metadata.lecture_ids.iter().map(String::as_str).collect();
        if found != declared || declared.len() != metadata.lecture_ids.len() {
            return Err(StoreError::LectureIds {
                declared: metadata.lecture_ids.clone(),
                found: found.into_iter().map(String::from).collect(),
            });
        }
        Ok(Self {
            index,
            segments,
            by_id,
            metadata,
        })
    }

    /// Embeds `segments` and builds a fresh store.
    pub fn build(
        segments: Vec<LectureSegment>,
        embedder: &dyn Embedder,
        cfg: &SegmentationConfig,
    ) -> Result<Self, StoreError> {
        let index = if segments.is_empty() {
            VectorIndex::new(embedder.dimension())
        } else {
            build_index(&segments, embedder)?
        };
        let lecture_ids: Vec<String> = {
            let mut seen = BTreeSet::new();
            segments
                .iter()
                .filter(|s| seen.insert(s.lecture_id.as_str()))
                .map(|s| s.lecture_id.clone())
                .collect()
        };
        let metadata = StoreMetadata {
            embedder_name: embedder.name().to_string(),
            dimension: embedder.dimension(),
            max_span: cfg.max_span,
            created_at: Utc::now(),
            lecture_ids,
            format_version: FORMAT_VERSION,
        };
        Self::new(index, segments, metadata)
    }

    /// Rebuilds the store with `lecture_id`'s segments replaced (or added).
    pub fn with_lecture(
        &self,
        lecture_id: &str,
        segments: Vec<LectureSegment>,
        embedder: &dyn Embedder,
        cfg: &SegmentationConfig,
    ) -> Result<Self, StoreError> {
        if embedder.name() != self.metadata.embedder_name || embedder.dimension() != self.metadata.dimension {
            return Err(StoreError::EmbedderMismatch {
                store: format!("{}/{}", self.metadata.embedder_name, self.metadata.dimension),
                requested: format!("{}/{}", embedder.name(), embedder.dimension()),
            });
        }
        if cfg.max_span != self.metadata.max_span {
            return Err(StoreError::MaxSpan {
                store: self.metadata.max_span,
                requested: cfg.max_span,
            });
        }
        let mut all: Vec<LectureSegment> = self
            .segments
            .iter()
            .filter(|s| s.lecture_id != lecture_id)
            .cloned()
            .collect();
        all.extend(segments);
        Self::build(all, embedder, cfg)
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn segments(&self) -> &[LectureSegment] {
        &self.segments
    }

    pub fn segment(&self, segment_id: &str) -> Option<&LectureSegment> {
        self.by_id.get(segment_id).map(|&row| &self.segments[row])
    }

    pub fn metadata(&self) -> &StoreMetadata {
        &self.metadata
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn has_lecture(&self, lecture_id: &str) -> bool {
        self.metadata.lecture_ids.iter().any(|l| l == lecture_id)
    }

    pub fn lecture_segments<'a>(&'a self, lecture_id: &'a str) -> impl Iterator<Item = &'a LectureSegment> + 'a {
        self.segments.iter().filter(move |s| s.lecture_id == lecture_id)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// Writes through a sibling temp file so readers never see half a file.
fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    let mut w = BufWriter::new(file);
    write(&mut w).and_then(|_| w.flush()).map_err(io_err(&tmp))?;
    drop(w);
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn save_store(store: &RagStore, dir: impl AsRef<Path>) -> Result<(), StoreError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    write_atomic(&dir.join(VECTORS_FILE), |w| {
        for v in store.index.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    })?;

    write_atomic(&dir.join(SEGMENTS_FILE), |w| {
        for seg in &store.segments {
            serde_json::to_writer(&mut *w, seg)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;

    write_atomic(&dir.join(META_FILE), |w| {
        serde_json::to_writer_pretty(&mut *w, &store.metadata)?;
        w.write_all(b"\n")
    })
}

pub fn load_store(dir: impl AsRef<Path>) -> Result<RagStore, StoreError> {
    let dir = dir.as_ref();
    let require = |name: &str| {
        let path = dir.join(name);
        if path.is_file() {
            Ok(path)
        } else {
            Err(StoreError::MissingFile(path))
        }
    };
    let meta_path = require(META_FILE)?;
    let segments_path = require(SEGMENTS_FILE)?;
    let vectors_path = require(VECTORS_FILE)?;

    let meta_bytes = fs::read(&meta_path).map_err(io_err(&meta_path))?;
    let metadata: StoreMetadata = serde_json::from_slice(&meta_bytes).map_err(|source| StoreError::Json {
        path: meta_path.clone(),
        source,
    })?;
    if metadata.format_version != FORMAT_VERSION {
        return Err(StoreError::Version {
            found: metadata.format_version,
        });
    }

    let file = fs::File::open(&segments_path).map_err(io_err(&segments_path))?;
    let mut segments = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(&segments_path))?;
        if line.trim().is_empty() {
            continue;
        }
        let seg: LectureSegment = serde_json::from_str(&line).map_err(|source| StoreError::Json {
            path: segments_path.clone(),
            source,
        })?;
        segments.push(seg);
    }

    let raw = fs::read(&vectors_path).map_err(io_err(&vectors_path))?;
    let dimension = metadata.dimension;
    if raw.len() % 4 != 0 || dimension == 0 || raw.len() / 4 != segments.len() * dimension {
        return Err(StoreError::VectorShape {
            values: raw.len() / 4,
            rows: segments.len(),
            dimension,
        });
    }
    let data: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let ids = segments.iter().map(|s| s.segment_id.clone()).collect();
    let index = VectorIndex::from_parts(dimension, data, ids)?;
    RagStore::new(index, segments, metadata)
}

/// SHA-256 over every file under `dir` (relative path and contents, in
/// sorted path order). Used to verify that serving never mutates a store.
pub fn directory_digest(dir: impl AsRef<Path>) -> std::io::Result<String> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                out.push(path.strip_prefix(root).unwrap_or(&path).to_path_buf());
            }
        }
        Ok(())
    }
    let root = dir.as_ref();
    let mut files = Vec::new();
    walk(root, root, &mut files)?;
    files.sort();
    let mut hasher = Sha256::new();
    for rel in files {
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0]);
        let bytes = fs::read(root.join(&rel))?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}
