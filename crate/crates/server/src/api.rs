//! HTTP routes.
//!
//! | method | path                                | purpose                              |
//! |--------|-------------------------------------|--------------------------------------|
//! | POST   | `/api/ask`                          | text question                        |
//! | POST   | `/api/voice`                        | spoken question (multipart WAV)      |
//! | POST   | `/api/avatar`                       | split an answer and start synthesis  |
//! | GET    | `/api/avatar/{session}/{seq}`       | segment media, or 202 while pending  |
//! | POST   | `/api/avatar/{session}/played`      | playback report                      |
//! | GET    | `/api/avatar/{session}/events`      | schedule event log                   |
//! | POST   | `/api/cleanup`                      | close a session and delete its media |
//! | GET    | `/api/lecture/{id}`                 | lecture summary                      |
//! | GET    | `/api/health`                       | adapter status                       |

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lectern_core::avatar::plan::{plan_playback, SegmentStatus};
use lectern_core::avatar::schedule::EventKind;
use lectern_core::avatar::sentences::split_sentences;
use lectern_core::avatar::synth::SynthClip;
use lectern_core::qa::{answer_question, transcribe_voice_query, Answer, QaError, VoiceQuery};
use lectern_core::retrieval::RetrievalError;
use lectern_core::{LatencyReport, QueryContext, RagStore, RetrievalConfig, Stage};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;
use tower::ServiceExt;
use tower_http::services::{ServeDir, ServeFile};
use tracing::{debug, warn};

use crate::adapters::{probe_reachable, Adapters};
use crate::config::ServiceConfig;
use crate::sessions::{apply_played, PlayedError, PlayedEvent, SessionHandle, SessionManager, WRITER_WAIT};

/// Upper bound on uploaded audio.
pub const MAX_AUDIO_BYTES: usize = 32 * 1024 * 1024;

pub struct AppState {
    pub store: Arc<RagStore>,
    pub adapters: Adapters,
    pub config: ServiceConfig,
    pub sessions: Arc<SessionManager>,
    synth_slots: Arc<Semaphore>,
    llm_lock: Arc<Mutex<()>>,
}

impl AppState {
    pub fn new(store: RagStore, adapters: Adapters, config: ServiceConfig, sessions: SessionManager) -> Arc<Self> {
        Arc::new(Self {
            store: Arc::new(store),
            adapters,
            synth_slots: Arc::new(Semaphore::new(config.avatar.workers.max(1))),
            config,
            sessions: Arc::new(sessions),
            llm_lock: Arc::new(Mutex::new(())),
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/api/ask", post(ask))
        .route("/api/voice", post(voice).layer(DefaultBodyLimit::max(MAX_AUDIO_BYTES)))
        .route("/api/avatar", post(avatar_start))
        .route("/api/avatar/{session_id}/events", get(avatar_events))
        .route("/api/avatar/{session_id}/played", post(avatar_played))
        .route("/api/avatar/{session_id}/{seq}", get(avatar_media))
        .route("/api/cleanup", post(cleanup))
        .route("/api/lecture/{lecture_id}", get(lecture))
        .route("/api/health", get(health));
    let api = match &state.config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    api.with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    stage: Option<Stage>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            stage: None,
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(stage) = self.stage {
            body["stage"] = json!(stage.as_str());
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<QaError> for ApiError {
    fn from(e: QaError) -> Self {
        match e {
            QaError::Query(RetrievalError::UnknownLecture(id)) => Self::not_found(format!("unknown lecture {id:?}")),
            QaError::Query(
                err @ (RetrievalError::EmptyQuestion | RetrievalError::PauseTime(_) | RetrievalError::Config(_)),
            ) => Self::unprocessable(err.to_string()),
            QaError::Query(other) => Self::internal(other.to_string()),
            QaError::Stage { stage, message } => Self {
                status: StatusCode::BAD_GATEWAY,
                message,
                stage: Some(stage),
            },
            QaError::Audio(err) => Self::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, err.to_string()),
        }
    }
}

fn joined(e: tokio::task::JoinError) -> ApiError {
    ApiError::internal(format!("worker failed: {e}"))
}

/// Per-request overrides of the retrieval defaults.
#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalOverrides {
    pub lambda: Option<f64>,
    #[serde(rename = "top_K")]
    pub candidates: Option<usize>,
    #[serde(rename = "top_k")]
    pub evidence: Option<usize>,
}

impl RetrievalOverrides {
    fn apply(self, base: RetrievalConfig) -> RetrievalConfig {
        RetrievalConfig {
            lambda: self.lambda.unwrap_or(base.lambda),
            candidates: self.candidates.unwrap_or(base.candidates),
            evidence: self.evidence.unwrap_or(base.evidence),
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct AskRequest {
    pub lecture_id: String,
    pub question: String,
    pub pause_time: f64,
    #[serde(default)]
    pub config: Option<RetrievalOverrides>,
}

#[derive(Debug, Serialize)]
pub struct EvidenceOut {
    pub segment_id: String,
    pub start: f64,
    pub end: f64,
    pub text: String,
    pub semantic_score: f64,
    pub adjusted_score: f64,
}

#[derive(Debug, Serialize)]
pub struct AskResponse {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    pub answer: String,
    pub evidence: Vec<EvidenceOut>,
    pub timings: LatencyReport,
}

impl AskResponse {
    fn from_answer(answer: Answer, transcript: Option<String>) -> Self {
        Self {
            transcript,
            answer: answer.text,
            evidence: answer
                .evidence
                .into_iter()
                .map(|s| EvidenceOut {
                    segment_id: s.segment.segment_id,
                    start: s.segment.start,
                    end: s.segment.end,
                    text: s.segment.text,
                    semantic_score: s.semantic_score,
                    adjusted_score: s.adjusted_score,
                })
                .collect(),
            timings: answer.timings,
        }
    }
}

/// One full question turn on a blocking worker.
async fn run_answer(state: &Arc<AppState>, ctx: QueryContext, overrides: Option<RetrievalOverrides>) -> Result<Answer, ApiError> {
    let cfg = overrides.unwrap_or_default().apply(state.config.retrieval);
    let st = state.clone();
    tokio::task::spawn_blocking(move || {
        let _serial = st.adapters.llm.serialized().then(|| st.llm_lock.lock().unwrap());
        answer_question(&st.store, st.adapters.embedder.as_ref(), st.adapters.llm.as_ref(), &ctx, &cfg)
    })
    .await
    .map_err(joined)?
    .map_err(ApiError::from)
}

async fn ask(State(state): State<Arc<AppState>>, Json(req): Json<AskRequest>) -> Result<Json<AskResponse>, ApiError> {
    let ctx = QueryContext::new(req.question, req.pause_time).in_lecture(req.lecture_id);
    let answer = run_answer(&state, ctx, req.config).await?;
    Ok(Json(AskResponse::from_answer(answer, None)))
}

#[derive(Default)]
struct VoiceForm {
    audio: Option<Vec<u8>>,
    lecture_id: Option<String>,
    pause_time: Option<f64>,
    config: Option<RetrievalOverrides>,
}

async fn read_voice_form(mut form: Multipart) -> Result<VoiceForm, ApiError> {
    let bad = |e: String| ApiError::unprocessable(format!("malformed form: {e}"));
    let mut out = VoiceForm::default();
    while let Some(field) = form.next_field().await.map_err(|e| bad(e.to_string()))? {
        let name = field.name().unwrap_or_default().to_string();
        match name.as_str() {
            "audio" => out.audio = Some(field.bytes().await.map_err(|e| bad(e.to_string()))?.to_vec()),
            "lecture_id" => out.lecture_id = Some(field.text().await.map_err(|e| bad(e.to_string()))?),
            "pause_time" => {
                let text = field.text().await.map_err(|e| bad(e.to_string()))?;
                out.pause_time = Some(text.trim().parse().map_err(|_| bad(format!("pause_time {text:?}")))?);
            }
            "config" => {
                let text = field.text().await.map_err(|e| bad(e.to_string()))?;
                out.config = Some(serde_json::from_str(&text).map_err(|e| bad(format!("config: {e}")))?);
            }
            other => debug!("ignoring form field {other:?}"),
        }
    }
    Ok(out)
}

async fn voice(State(state): State<Arc<AppState>>, form: Multipart) -> Result<Response, ApiError> {
    let form = read_voice_form(form).await?;
    let audio = form.audio.ok_or_else(|| ApiError::unprocessable("missing audio field"))?;
    let lecture_id = form.lecture_id.ok_or_else(|| ApiError::unprocessable("missing lecture_id field"))?;
    let pause_time = form.pause_time.ok_or_else(|| ApiError::unprocessable("missing pause_time field"))?;

    let asr = state.adapters.asr.clone();
    let (query, asr_secs) = tokio::task::spawn_blocking(move || {
        let started = Instant::now();
        let result = transcribe_voice_query(asr.as_ref(), &audio);
        (result, started.elapsed().as_secs_f64())
    })
    .await
    .map_err(joined)?;
    let mut timings = LatencyReport::default();
    timings.set(Stage::Asr, asr_secs);

    match query? {
        VoiceQuery::NoSpeech => Ok(Json(json!({ "no_speech": true, "timings": timings })).into_response()),
        VoiceQuery::Transcript(text) => {
            let ctx = QueryContext::new(text.clone(), pause_time).in_lecture(lecture_id);
            let mut answer = run_answer(&state, ctx, form.config).await?;
            answer.timings.set(Stage::Asr, asr_secs);
            Ok(Json(AskResponse::from_answer(answer, Some(text))).into_response())
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct AvatarRequest {
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub lecture_id: Option<String>,
    pub answer_text: String,
}

#[derive(Debug, Serialize)]
pub struct SegmentOut {
    pub seq: usize,
    pub text: String,
}

#[derive(Debug, Serialize)]
pub struct AvatarResponse {
    pub session_id: String,
    pub segments: Vec<SegmentOut>,
}

fn session(state: &AppState, id: &str) -> Result<SessionHandle, ApiError> {
    state
        .sessions
        .get(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown session {id:?}")))
}

async fn avatar_start(State(state): State<Arc<AppState>>, Json(req): Json<AvatarRequest>) -> Result<Json<AvatarResponse>, ApiError> {
    let texts = split_sentences(&req.answer_text);
    if texts.is_empty() {
        return Err(ApiError::unprocessable("answer_text is empty"));
    }
    let (session_id, handle) = match &req.session_id {
        Some(id) => (id.clone(), session(&state, id)?),
        None => state.sessions.create(req.lecture_id.clone()),
    };
    let mut plan = plan_playback(&texts, state.config.avatar.lookahead, state.config.avatar.preload_count)
        .map_err(|e| ApiError::unprocessable(e.to_string()))?;

    // Retire the previous answer first: its queued jobs see the new
    // generation and skip, and running ones are waited out so they cannot
    // write over the new answer's clips.
    let (generation, in_flight) = {
        let mut s = handle.lock().unwrap();
        s.generation += 1;
        s.synth = None;
        (s.generation, s.in_flight.clone())
    };
    tokio::task::spawn_blocking(move || in_flight.wait_idle(WRITER_WAIT))
        .await
        .map_err(joined)?;

    let requested = {
        let mut s = handle.lock().unwrap();
        if s.closed {
            return Err(ApiError::not_found(format!("unknown session {session_id:?}")));
        }
        if s.generation != generation {
            return Err(ApiError::new(StatusCode::CONFLICT, "superseded by a newer answer"));
        }
        if s.plan.is_some() {
            let report = lectern_core::avatar::cleanup::cleanup_session(&mut s.registry);
            debug!(session = %session_id, deleted = report.deleted_count(), "replaced previous answer");
        }
        let requested = plan.start();
        s.plan = Some(plan);
        s.events.clear();
        let dir = s.dir().to_path_buf();
        s.synth = Some(Arc::from(state.adapters.synth.for_session(&dir)));
        requested
    };
    dispatch(&state, &handle, generation, requested);

    Ok(Json(AvatarResponse {
        session_id,
        segments: texts
            .into_iter()
            .enumerate()
            .map(|(seq, text)| SegmentOut { seq, text })
            .collect(),
    }))
}

/// Starts synthesis of `seqs` on the worker pool.
fn dispatch(state: &Arc<AppState>, handle: &SessionHandle, generation: u64, seqs: Vec<usize>) {
    for seq in seqs {
        let (synth, text) = {
            let mut s = handle.lock().unwrap();
            let now = state.sessions.now();
            s.log(now, EventKind::RequestSynth, seq);
            let text = s.plan.as_ref().map(|p| p.segments[seq].text.clone()).unwrap_or_default();
            (s.synth.clone(), text)
        };
        let Some(synth) = synth else { continue };
        let state = state.clone();
        let handle = handle.clone();
        tokio::spawn(async move {
            let Ok(_permit) = state.synth_slots.clone().acquire_owned().await else {
                return;
            };
            let writer = {
                let s = handle.lock().unwrap();
                if s.closed || s.generation != generation {
                    return;
                }
                s.in_flight.enter()
            };
            let result = match tokio::task::spawn_blocking(move || {
                let _writer = writer;
                synth.synthesize(seq, &text)
            })
            .await
            {
                Ok(r) => r,
                Err(e) => {
                    warn!("synthesis worker for segment {seq} panicked: {e}");
                    return;
                }
            };
            if state.adapters.synth.simulated_latency() {
                let latency = match &result {
                    Ok(c) => c.latency,
                    Err(e) => e.latency,
                };
                tokio::time::sleep(Duration::from_secs_f64(latency.max(0.0))).await;
            }
            complete(&state, &handle, generation, seq, result);
        });
    }
}

fn complete(
    state: &AppState,
    handle: &SessionHandle,
    generation: u64,
    seq: usize,
    result: Result<SynthClip, lectern_core::avatar::synth::SynthError>,
) {
    let artifacts = match &result {
        Ok(c) => c.artifacts.clone(),
        Err(e) => e.artifacts.clone(),
    };
    let mut s = handle.lock().unwrap();
    if s.closed || s.generation != generation {
        // The session is gone or moved on; nothing may outlive it.
        for path in &artifacts {
            let _ = std::fs::remove_file(path);
        }
        if s.closed {
            let _ = std::fs::remove_dir(s.dir());
        }
        return;
    }
    for path in artifacts {
        s.registry.register(path);
    }
    let now = state.sessions.now();
    let session_id = s.id.clone();
    let Some(plan) = s.plan.as_mut() else { return };
    let kind = match result {
        Ok(clip) => match plan.mark_ready(seq, clip.media_ref, clip.duration) {
            Ok(()) => EventKind::Ready,
            Err(e) => {
                warn!("segment {seq}: {e}");
                return;
            }
        },
        Err(err) => {
            warn!(session = %session_id, "synthesis of segment {seq} failed: {err}");
            if let Err(e) = plan.mark_failed(seq) {
                warn!("segment {seq}: {e}");
                return;
            }
            EventKind::SynthFailed
        }
    };
    s.log(now, kind, seq);
}

async fn avatar_media(
    State(state): State<Arc<AppState>>,
    Path((session_id, seq)): Path<(String, String)>,
    request: Request,
) -> Result<Response, ApiError> {
    let seq: usize = seq
        .parse()
        .map_err(|_| ApiError::not_found(format!("no segment {seq:?}")))?;
    let handle = session(&state, &session_id)?;
    let (status, media) = {
        let s = handle.lock().unwrap();
        let plan = s.plan.as_ref().ok_or_else(|| ApiError::not_found("session has no answer"))?;
        let seg = plan
            .segment(seq)
            .map_err(|_| ApiError::not_found(format!("no segment {seq}")))?;
        (seg.status, seg.media_ref.clone())
    };
    match status {
        SegmentStatus::Pending | SegmentStatus::Synthesizing => {
            let mut resp = (StatusCode::ACCEPTED, Json(json!({ "seq": seq, "status": status }))).into_response();
            resp.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from_static("1"));
            Ok(resp)
        }
        SegmentStatus::Failed => Err(ApiError::new(StatusCode::GONE, format!("segment {seq} failed to synthesize"))),
        SegmentStatus::Ready | SegmentStatus::Playing | SegmentStatus::Done => {
            let path = media.ok_or_else(|| ApiError::internal("ready segment without media"))?;
            let resp = ServeFile::new(path)
                .oneshot(request)
                .await
                .map_err(|e| ApiError::internal(e.to_string()))?;
            Ok(resp.map(Body::new))
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct PlayedRequest {
    pub seq: usize,
    #[serde(default)]
    pub event: PlayedEvent,
}

async fn avatar_played(
    State(state): State<Arc<AppState>>,
    Path(session_id): Path<String>,
    Json(req): Json<PlayedRequest>,
) -> Result<Response, ApiError> {
    let handle = session(&state, &session_id)?;
    let (generation, outcome, cursor) = {
        let mut s = handle.lock().unwrap();
        let generation = s.generation;
        let plan = s.plan.as_mut().ok_or_else(|| ApiError::not_found("session has no answer"))?;
        let outcome = apply_played(plan, req.seq, req.event);
        let cursor = plan.cursor();
        let now = state.sessions.now();
        for (kind, seq) in &outcome.log {
            s.log(now, *kind, *seq);
        }
        (generation, outcome, cursor)
    };
    dispatch(&state, &handle, generation, outcome.requested.clone());

    if let Some(err) = outcome.error {
        return Err(match err {
            PlayedError::UnknownSegment(seq) => ApiError::not_found(format!("no segment {seq}")),
            PlayedError::Failed(seq) => ApiError::new(StatusCode::GONE, format!("segment {seq} failed to synthesize")),
            PlayedError::NotReady(seq) => ApiError::new(StatusCode::CONFLICT, format!("segment {seq} is not ready")),
            PlayedError::Skipped { expected } => {
                ApiError::new(StatusCode::CONFLICT, format!("segment {expected} has not been played yet"))
            }
            PlayedError::Plan(e) => ApiError::new(StatusCode::CONFLICT, e.to_string()),
        });
    }
    Ok(Json(json!({ "requested": outcome.requested, "cursor": cursor })).into_response())
}

async fn avatar_events(State(state): State<Arc<AppState>>, Path(session_id): Path<String>) -> Result<Response, ApiError> {
    let handle = session(&state, &session_id)?;
    let s = handle.lock().unwrap();
    let segments: Vec<_> = s
        .plan
        .iter()
        .flat_map(|p| p.segments.iter())
        .map(|seg| json!({ "seq": seg.seq, "status": seg.status, "duration": seg.duration }))
        .collect();
    Ok(Json(json!({ "session_id": s.id, "events": s.events, "segments": segments })).into_response())
}

#[derive(Debug, Deserialize)]
pub struct CleanupRequest {
    pub session_id: String,
}

async fn cleanup(State(state): State<Arc<AppState>>, Json(req): Json<CleanupRequest>) -> Result<Json<serde_json::Value>, ApiError> {
    let sessions = state.sessions.clone();
    let report = tokio::task::spawn_blocking(move || sessions.close(&req.session_id))
        .await
        .map_err(joined)?;
    Ok(Json(json!({
        "deleted": report.deleted_count(),
        "already_absent": report.already_absent.len(),
        "failed": report.failed.len(),
    })))
}

async fn lecture(State(state): State<Arc<AppState>>, Path(lecture_id): Path<String>) -> Result<Response, ApiError> {
    if !state.store.has_lecture(&lecture_id) {
        return Err(ApiError::not_found(format!("unknown lecture {lecture_id:?}")));
    }
    let (count, start, end) = state
        .store
        .lecture_segments(&lecture_id)
        .fold((0usize, f64::INFINITY, 0f64), |(n, s, e), seg| (n + 1, s.min(seg.start), e.max(seg.end)));
    let meta = state.store.metadata();
    Ok(Json(json!({
        "lecture_id": lecture_id,
        "segments": count,
        "start": start,
        "duration": end,
        "metadata": {
            "embedder": meta.embedder_name,
            "dimension": meta.dimension,
            "max_span": meta.max_span,
            "created_at": meta.created_at,
            "format_version": meta.format_version,
        },
    }))
    .into_response())
}

async fn health(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let probes = state.adapters.probes.clone();
    let log = state.adapters.log.clone();
    let checked = tokio::task::spawn_blocking(move || {
        probes
            .into_iter()
            .map(|p| {
                let ok = p
                    .url
                    .as_deref()
                    .is_none_or(|u| probe_reachable(u, Duration::from_millis(500), &log));
                (p, ok)
            })
            .collect::<Vec<_>>()
    })
    .await
    .map_err(joined)?;
    let degraded = checked.iter().any(|(_, ok)| !ok);
    let adapters: serde_json::Map<String, serde_json::Value> = checked
        .into_iter()
        .map(|(p, ok)| {
            (
                p.adapter.to_string(),
                json!({ "kind": p.kind, "url": p.url, "status": if ok { "ok" } else { "degraded" } }),
            )
        })
        .collect();
    Ok(Json(json!({
        "status": if degraded { "degraded" } else { "ok" },
        "adapters": adapters,
        "lectures": state.store.metadata().lecture_ids,
        "sessions": state.sessions.len(),
    }))
    .into_response())
}
