#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use lectern_core::audio::{encode_wav_pcm16, silent_wav};
use lectern_core::qa::StubRecognizer;
use lectern_core::store::{load_store, save_store};
use lectern_core::{LectureSegment, RagStore, SegmentationConfig, StubEmbedder};
use lectern_server::adapters::{Adapters, StubSynthProvider};
use lectern_server::api::{router, AppState};
use lectern_server::config::ServiceConfig;
use lectern_server::sessions::SessionManager;
use serde_json::Value;
use tower::ServiceExt;

pub const LECTURE: &str = "ct-intro";
pub const PLANTED_TEXT: &str = "The ramp filter boosts high spatial frequencies before backprojection.";
pub const PLANTED_ID: &str = "ct-intro-0042";
pub const VOICE_QUESTION: &str = "why is the projection data filtered";

pub fn fixture_segments() -> Vec<LectureSegment> {
    (0..60)
        .map(|i| {
            let text = if i == 42 {
                PLANTED_TEXT.to_string()
            } else {
                format!("Lecture sentence number {i} covers detector geometry and sampling. It continues briefly.")
            };
            LectureSegment {
                segment_id: format!("{LECTURE}-{i:04}"),
                lecture_id: LECTURE.into(),
                start: i as f64 * 20.0,
                end: i as f64 * 20.0 + 19.0,
                text,
            }
        })
        .collect()
}

/// Writes the fixture store into `dir`.
pub fn write_fixture_store(dir: &Path) {
    let store = RagStore::build(fixture_segments(), &StubEmbedder::new(64), &SegmentationConfig::default()).unwrap();
    save_store(&store, dir).unwrap();
}

/// A short tone whose transcript is [`VOICE_QUESTION`] in the stub table.
pub fn mapped_wav() -> Vec<u8> {
    let samples: Vec<i16> = (0..8000).map(|i| ((i as f64 * 0.05).sin() * 8000.0) as i16).collect();
    encode_wav_pcm16(&samples, 16_000)
}

pub fn silence_wav() -> Vec<u8> {
    silent_wav(1.0)
}

/// Shared offset added to a fixed base instant; tests move it forward.
#[derive(Clone)]
pub struct TestClock {
    base: Instant,
    offset: Arc<Mutex<Duration>>,
}

impl TestClock {
    pub fn new() -> Self {
        Self {
            base: Instant::now(),
            offset: Arc::new(Mutex::new(Duration::ZERO)),
        }
    }

    pub fn advance(&self, by: Duration) {
        *self.offset.lock().unwrap() += by;
    }

    pub fn now_fn(&self) -> lectern_server::sessions::NowFn {
        let c = self.clone();
        Arc::new(move || c.base + *c.offset.lock().unwrap())
    }
}

pub struct Harness {
    pub app: Router,
    pub state: Arc<AppState>,
    pub store_dir: PathBuf,
    pub media_root: PathBuf,
    pub clock: TestClock,
    _tmp: tempfile::TempDir,
}

/// Final adjustment of the adapters before the service is built.
pub type Customize = Box<dyn FnOnce(&mut Adapters)>;

#[derive(Default)]
pub struct HarnessOptions {
    pub synth: StubSynthProvider,
    pub config: ServiceConfig,
    pub customize: Option<Customize>,
}

impl Harness {
    pub fn new() -> Self {
        Self::with(HarnessOptions::default())
    }

    pub fn with(opts: HarnessOptions) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let store_dir = tmp.path().join("store");
        let media_root = tmp.path().join("alive");
        write_fixture_store(&store_dir);
        let store = load_store(&store_dir).unwrap();

        let mut adapters = Adapters::stubs(store.metadata()).unwrap();
        adapters.asr = Arc::new(StubRecognizer::new().with_entry(&mapped_wav(), VOICE_QUESTION));
        adapters.synth = Arc::new(opts.synth);
        if let Some(f) = opts.customize {
            f(&mut adapters);
        }
        let mut config = opts.config;
        config.avatar.media_root = media_root.clone();
        let clock = TestClock::new();
        let sessions = SessionManager::new(&media_root, Duration::from_secs(config.session.ttl_secs), clock.now_fn());
        let state = AppState::new(store, adapters, config, sessions);
        Self {
            app: router(state.clone()),
            state,
            store_dir,
            media_root,
            clock,
            _tmp: tmp,
        }
    }

    pub async fn send(&self, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let headers = resp.headers().clone();
        let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, headers, body)
    }

    pub async fn post_json(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let req = Request::post(path)
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap();
        let (status, _, bytes) = self.send(req).await;
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    pub async fn get_json(&self, path: &str) -> (StatusCode, Value) {
        let (status, _, bytes) = self.send(Request::get(path).body(Body::empty()).unwrap()).await;
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    pub async fn post_voice(&self, audio: &[u8], lecture_id: &str, pause_time: f64) -> (StatusCode, Value) {
        let boundary = "lectern-test-boundary";
        let mut body = Vec::new();
        let mut text_field = |name: &str, value: &str| {
            body.extend_from_slice(
                format!("--{boundary}\r\nContent-Disposition: form-data; name=\"{name}\"\r\n\r\n{value}\r\n").as_bytes(),
            );
        };
        text_field("lecture_id", lecture_id);
        text_field("pause_time", &pause_time.to_string());
        body.extend_from_slice(
            format!(
                "--{boundary}\r\nContent-Disposition: form-data; name=\"audio\"; filename=\"q.wav\"\r\nContent-Type: audio/wav\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(audio);
        body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
        let req = Request::post("/api/voice")
            .header("content-type", format!("multipart/form-data; boundary={boundary}"))
            .body(Body::from(body))
            .unwrap();
        let (status, _, bytes) = self.send(req).await;
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    /// Polls a segment until it stops answering 202.
    pub async fn wait_for_segment(&self, session: &str, seq: usize) -> StatusCode {
        for _ in 0..400 {
            let (status, _, _) = self
                .send(Request::get(format!("/api/avatar/{session}/{seq}")).body(Body::empty()).unwrap())
                .await;
            if status != StatusCode::ACCEPTED {
                return status;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        StatusCode::ACCEPTED
    }

    pub fn session_dir(&self, session: &str) -> PathBuf {
        self.media_root.join(session)
    }
}

pub fn five_sentence_answer() -> String {
    [
        "Filtered backprojection first applies a ramp filter to every projection.",
        "The filter compensates for the oversampling of low frequencies near the center.",
        "Each filtered projection is then smeared back across the image grid.",
        "Summing all the smeared projections reconstructs the attenuation map.",
        "Noise is amplified by the ramp, so practical kernels roll off at high frequency.",
    ]
    .join(" ")
}
