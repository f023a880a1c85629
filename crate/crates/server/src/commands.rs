//! Operator commands behind the `lectern` binary.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use lectern_core::audio::silent_wav;
use lectern_core::avatar::cleanup::{cleanup_session, TempResourceRegistry};
use lectern_core::avatar::sentences::split_sentences;
use lectern_core::avatar::synth::{StubSynth, Synthesizer};
use lectern_core::ingest::ingest_lecture;
use lectern_core::qa::{answer_question, transcribe_voice_query, EchoModel, StubRecognizer, VoiceQuery};
use lectern_core::retrieval::retrieve;
use lectern_core::store::{load_store, save_store, META_FILE};
use lectern_core::{
    BagOfWordsEmbedder, Embedder, LatencyReport, LectureSegment, QueryContext, RagStore, RetrievalConfig,
    SegmentationConfig, Stage, StubEmbedder,
};
use rand::{Rng, SeedableRng};
use serde::Serialize;
use tracing::{info, warn};

use crate::adapters::{builtin_embedder, Adapters, ConnectionLog};
use crate::api::{router, AppState};
use crate::config::ServiceConfig;
use crate::sessions::{system_now, SessionManager};

/// Opens an existing store with an actionable error when it is missing.
pub fn open_store(dir: &Path) -> Result<RagStore> {
    if !dir.join(META_FILE).is_file() {
        bail!(
            "no store at {} (expected {META_FILE}); create one with `lectern ingest --srt <file> --lecture-id <id> --out {}`",
            dir.display(),
            dir.display()
        );
    }
    load_store(dir).with_context(|| format!("loading store {}", dir.display()))
}

#[derive(Debug, Serialize)]
pub struct IngestSummary {
    pub lecture_id: String,
    pub segments: usize,
    pub store_segments: usize,
    pub lectures: Vec<String>,
}

/// Ingests one subtitle file, adding it to the store at `out` (created if
/// absent, lecture replaced if present).
pub fn ingest(srt: &Path, lecture_id: &str, max_span: f64, out: &Path, embedder: &dyn Embedder) -> Result<IngestSummary> {
    let cfg = SegmentationConfig::new(max_span)?;
    let segments = ingest_lecture(srt, lecture_id, &cfg)?;
    let count = segments.len();
    let store = if out.join(META_FILE).is_file() {
        let existing = load_store(out).with_context(|| format!("loading store {}", out.display()))?;
        existing.with_lecture(lecture_id, segments, embedder, &cfg)?
    } else {
        RagStore::build(segments, embedder, &cfg)?
    };
    save_store(&store, out).with_context(|| format!("writing store {}", out.display()))?;
    info!(lecture = lecture_id, segments = count, "ingested");
    Ok(IngestSummary {
        lecture_id: lecture_id.to_string(),
        segments: count,
        store_segments: store.len(),
        lectures: store.metadata().lecture_ids.clone(),
    })
}

/// Serves the API until interrupted.
pub async fn serve(store_dir: &Path, config: ServiceConfig) -> Result<()> {
    let store = open_store(store_dir)?;
    let adapters = Adapters::from_config(&config.adapters, store.metadata(), ConnectionLog::default())?;
    let sessions = SessionManager::new(
        &config.avatar.media_root,
        Duration::from_secs(config.session.ttl_secs),
        system_now(),
    );
    let addr = SocketAddr::new(config.bind, config.port);
    let sweep = Duration::from_secs(config.session.sweep_secs);
    let state = AppState::new(store, adapters, config, sessions);

    let sweeper = state.sessions.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(sweep);
        loop {
            tick.tick().await;
            let sessions = sweeper.clone();
            if let Err(e) = tokio::task::spawn_blocking(move || sessions.sweep_expired()).await {
                warn!("session sweep failed: {e}");
            }
        }
    });

    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    info!("listening on http://{}", listener.local_addr()?);
    let app = router(state.clone()).layer(tower_http::trace::TraceLayer::new_for_http());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;

    // Sessions never outlive the process.
    let sessions = state.sessions.clone();
    tokio::task::spawn_blocking(move || {
        for id in sessions.ids() {
            sessions.close(&id);
        }
    })
    .await?;
    Ok(())
}

const VOCABULARY: &[&str] = &[
    "attenuation", "projection", "detector", "filtered", "backprojection", "sinogram", "voxel", "contrast",
    "dose", "gantry", "helical", "pitch", "kernel", "fourier", "slice", "tissue", "hounsfield", "artifact",
    "beam", "hardening", "scatter", "collimator", "spectrum", "photon", "energy", "reconstruction", "iterative",
    "noise", "resolution", "modulation", "transfer", "function", "sampling", "aliasing", "interpolation",
    "magnetic", "resonance", "gradient", "echo", "relaxation", "precession", "frequency", "phase", "encoding",
    "ultrasound", "transducer", "doppler", "impedance", "acoustic", "nuclear", "tracer", "emission",
];

fn sentence(rng: &mut impl Rng, words: usize) -> String {
    (0..words)
        .map(|_| VOCABULARY[rng.random_range(0..VOCABULARY.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// A store of `n` 20-second segments of vocabulary-drawn text, split into
/// lectures of at most 500 segments.
pub fn synthetic_store(n: usize, embedder: &dyn Embedder, seed: u64) -> Result<RagStore> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let segments: Vec<LectureSegment> = (0..n)
        .map(|i| {
            let lecture = format!("synthetic-{:03}", i / 500);
            let local = i % 500;
            LectureSegment {
                segment_id: format!("{lecture}-{local:04}"),
                lecture_id: lecture,
                start: local as f64 * 20.0,
                end: local as f64 * 20.0 + 19.5,
                text: format!("{}.", sentence(&mut rng, 25 + i % 20)),
            }
        })
        .collect();
    Ok(RagStore::build(segments, embedder, &SegmentationConfig::default())?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

/// Nearest-rank percentiles of `samples` (seconds), reported in milliseconds.
pub fn percentiles(samples: &[f64]) -> Percentiles {
    if samples.is_empty() {
        return Percentiles::default();
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = |p: f64| {
        let idx = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
        sorted[idx.clamp(1, sorted.len()) - 1] * 1000.0
    };
    Percentiles {
        p50: rank(50.0),
        p95: rank(95.0),
        p99: rank(99.0),
        max: sorted[sorted.len() - 1] * 1000.0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub segments: usize,
    pub queries: usize,
    pub embedder: String,
    pub dimension: usize,
    /// Milliseconds per stage; stages not exercised are absent.
    pub stages: Vec<(String, Percentiles)>,
    pub retrieval: Percentiles,
    pub total: Percentiles,
}

impl BenchReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{} queries over {} segments ({} embedder, d={})\n{:<10} {:>10} {:>10} {:>10} {:>10}\n",
            self.queries, self.segments, self.embedder, self.dimension, "stage", "p50 ms", "p95 ms", "p99 ms", "max ms"
        );
        let rows = self
            .stages
            .iter()
            .map(|(n, p)| (n.as_str(), p))
            .chain([("total", &self.total)]);
        for (name, p) in rows {
            out.push_str(&format!("{name:<10} {:>10.3} {:>10.3} {:>10.3} {:>10.3}\n", p.p50, p.p95, p.p99, p.max));
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub queries: usize,
    pub seed: u64,
    /// Also exercise the stub voice and avatar stages.
    pub full_pipeline: bool,
    pub retrieval: RetrievalConfig,
}

/// Runs `queries` questions through the pipeline with built-in adapters,
/// timing each stage.
pub fn bench(store: &RagStore, embedder: &dyn Embedder, opts: &BenchOptions) -> Result<BenchReport> {
    if store.is_empty() {
        bail!("store has no segments");
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let wav = silent_wav(1.0);
    let media_root = std::env::temp_dir().join("alive");
    let mut per_stage: Vec<(Stage, Vec<f64>)> = Stage::ALL.iter().map(|s| (*s, Vec::new())).collect();
    let mut retrieval_only = Vec::with_capacity(opts.queries);
    let mut totals = Vec::with_capacity(opts.queries);

    for q in 0..opts.queries {
        let seg = &store.segments()[rng.random_range(0..store.len())];
        let words: Vec<&str> = seg.text.split_whitespace().take(rng.random_range(3..=8)).collect();
        let question = words.join(" ");
        let pause = rng.random_range(seg.start..=seg.end + 120.0);
        let ctx = QueryContext::new(question.clone(), pause).in_lecture(seg.lecture_id.clone());

        let started = Instant::now();
        retrieve(store, embedder, &ctx, &opts.retrieval)?;
        retrieval_only.push(started.elapsed().as_secs_f64());

        let mut timings = LatencyReport::default();
        let turn = Instant::now();
        if opts.full_pipeline {
            let asr = StubRecognizer::new().with_entry(&wav, question.clone());
            let heard = timings.time(Stage::Asr, || transcribe_voice_query(&asr, &wav))?;
            if heard != VoiceQuery::Transcript(question.clone()) {
                bail!("stub recognizer did not return the fixture transcript");
            }
        }
        let answer = answer_question(store, embedder, &EchoModel, &ctx, &opts.retrieval)?;
        for stage in [Stage::Retrieval, Stage::Llm] {
            if let Some(v) = answer.timings.get(stage) {
                timings.set(stage, v);
            }
        }
        if opts.full_pipeline {
            let sid = format!("bench-{}-{q}", std::process::id());
            let dir = media_root.join(&sid);
            let synth = StubSynth::new().writing_to(&dir);
            let mut registry = TempResourceRegistry::with_root(&sid, &dir);
            let first = split_sentences(&answer.text).into_iter().next().unwrap_or_else(|| answer.text.clone());
            match synth.synthesize(0, &first) {
                Ok(clip) => {
                    for stage in [Stage::Tts, Stage::Avatar] {
                        if let Some(v) = clip.timings.get(stage) {
                            timings.set(stage, v);
                        }
                    }
                    clip.artifacts.into_iter().for_each(|p| registry.register(p));
                }
                Err(e) => bail!("stub synthesis failed: {e}"),
            }
            cleanup_session(&mut registry);
        }
        totals.push(turn.elapsed().as_secs_f64());
        for (stage, samples) in &mut per_stage {
            if let Some(v) = timings.get(*stage) {
                samples.push(v);
            }
        }
    }

    let meta = store.metadata();
    Ok(BenchReport {
        segments: store.len(),
        queries: opts.queries,
        embedder: meta.embedder_name.clone(),
        dimension: meta.dimension,
        stages: per_stage
            .into_iter()
            .filter(|(_, s)| !s.is_empty())
            .map(|(stage, s)| (stage.as_str().to_string(), percentiles(&s)))
            .collect(),
        retrieval: percentiles(&retrieval_only),
        total: percentiles(&totals),
    })
}

/// One of the built-in embedders, by name.
pub fn cli_embedder(name: &str, dimension: usize) -> Result<Arc<dyn Embedder>> {
    match name {
        StubEmbedder::NAME | BagOfWordsEmbedder::NAME => Ok(builtin_embedder(name, dimension)?),
        other => bail!("unknown embedder {other:?}; built-ins are \"stub\" and \"stub-bow\""),
    }
}
