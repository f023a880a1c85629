//! Backends selected by configuration: the built-in stubs or local HTTP
//! services.
//!
//! HTTP contracts (all JSON unless noted):
//!
//! | adapter  | request                         | response                         |
//! |----------|---------------------------------|----------------------------------|
//! | embedder | `{"texts": [..]}`               | `{"vectors": [[..], ..]}`        |
//! | llm      | `{"prompt": ".."}`              | `{"text": ".."}`                 |
//! | asr      | WAV body, `audio/wav`           | `{"text": "..", "confident": b}` |
//! | synth    | `{"text": ".."}`                | `{"media_url": "..", "duration": s}` |
//!
//! Every outbound connection is recorded in a [`ConnectionLog`], which the
//! privacy tests inspect.

use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use lectern_core::embed::EmbedError;
use lectern_core::qa::{AdapterError, EchoModel, LanguageModel, SpeechRecognizer, StubRecognizer, Transcript};
use lectern_core::avatar::synth::{StubSynth, SynthClip, SynthError, Synthesizer};
use lectern_core::{BagOfWordsEmbedder, Embedder, Embedding, LatencyReport, Stage, StoreMetadata, StubEmbedder};
use serde::{Deserialize, Serialize};
use serde_json::json;
use url::Url;

use crate::config::{check_adapter_url, AdapterConfig, AsrSpec, ConfigError, EmbedderSpec, LlmSpec, SynthSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Connection {
    pub adapter: String,
    pub host: String,
    pub port: u16,
}

/// Append-only record of outbound connections.
#[derive(Debug, Clone, Default)]
pub struct ConnectionLog(Arc<Mutex<Vec<Connection>>>);

impl ConnectionLog {
    pub fn record(&self, adapter: &str, url: &Url) {
        self.0.lock().unwrap().push(Connection {
            adapter: adapter.to_string(),
            host: url.host_str().unwrap_or_default().to_string(),
            port: url.port_or_known_default().unwrap_or(0),
        });
    }

    pub fn entries(&self) -> Vec<Connection> {
        self.0.lock().unwrap().clone()
    }
}

/// Blocking JSON-over-HTTP client bound to one adapter URL.
///
/// The client is built on first use: a blocking client cannot be created
/// from async code, and requests only ever run on worker threads.
#[derive(Debug, Clone)]
struct Endpoint {
    name: &'static str,
    url: Url,
    timeout: Duration,
    client: Arc<OnceLock<reqwest::blocking::Client>>,
    log: ConnectionLog,
}

impl Endpoint {
    fn new(name: &'static str, url: Url, timeout_secs: f64, log: ConnectionLog) -> Self {
        Self {
            name,
            url,
            timeout: Duration::from_secs_f64(timeout_secs.max(0.001)),
            client: Arc::default(),
            log,
        }
    }

    fn client(&self) -> Result<reqwest::blocking::Client, String> {
        if let Some(c) = self.client.get() {
            return Ok(c.clone());
        }
        let built = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .no_proxy()
            .build()
            .map_err(|e| format!("{} adapter client: {e}", self.name))?;
        Ok(self.client.get_or_init(|| built).clone())
    }

    fn post_json<T: for<'de> Deserialize<'de>>(&self, body: &serde_json::Value) -> Result<T, String> {
        self.log.record(self.name, &self.url);
        self.client()?
            .post(self.url.clone())
            .json(body)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json::<T>())
            .map_err(|e| format!("{} adapter at {}: {e}", self.name, self.url))
    }
}

pub struct HttpEmbedder {
    endpoint: Endpoint,
    model: String,
    dimension: usize,
}

#[derive(Deserialize)]
struct VectorsReply {
    vectors: Vec<Vec<f32>>,
}

impl Embedder for HttpEmbedder {
    fn name(&self) -> &str {
        &self.model
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        let reply: VectorsReply = self
            .endpoint
            .post_json(&json!({ "texts": texts }))
            .map_err(EmbedError::Backend)?;
        // Normalization is part of the index contract, so it is applied here
        // rather than trusted to the backend.
        Ok(reply.vectors.into_iter().map(Embedding::normalized).collect())
    }
}

pub struct HttpLlm {
    endpoint: Endpoint,
    max_answer_chars: Option<usize>,
}

#[derive(Deserialize)]
struct TextReply {
    text: String,
}

impl LanguageModel for HttpLlm {
    fn complete(&self, prompt: &str) -> Result<String, AdapterError> {
        let reply: TextReply = self
            .endpoint
            .post_json(&json!({ "prompt": prompt }))
            .map_err(AdapterError::Backend)?;
        Ok(reply.text)
    }

    fn max_answer_chars(&self) -> usize {
        self.max_answer_chars.unwrap_or(4000)
    }
}

pub struct HttpAsr {
    endpoint: Endpoint,
}

impl SpeechRecognizer for HttpAsr {
    fn transcribe(&self, wav: &[u8]) -> Result<Transcript, AdapterError> {
        let ep = &self.endpoint;
        ep.log.record(ep.name, &ep.url);
        ep.client()
            .map_err(AdapterError::Backend)?
            .post(ep.url.clone())
            .header(reqwest::header::CONTENT_TYPE, "audio/wav")
            .body(wav.to_vec())
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json::<Transcript>())
            .map_err(|e| AdapterError::Backend(format!("asr adapter at {}: {e}", ep.url)))
    }
}

/// Produces a synthesizer that writes into one session's media directory.
pub trait SynthProvider: Send + Sync {
    fn for_session(&self, dir: &Path) -> Box<dyn Synthesizer>;

    /// True when clip latency is a model value the worker should wait out
    /// (stubs), false when it was measured during the call.
    fn simulated_latency(&self) -> bool;
}

#[derive(Debug, Clone, Default)]
pub struct StubSynthProvider {
    pub latency_secs: f64,
    pub failing: Vec<usize>,
}

impl SynthProvider for StubSynthProvider {
    fn for_session(&self, dir: &Path) -> Box<dyn Synthesizer> {
        Box::new(
            StubSynth::new()
                .writing_to(dir)
                .with_latency(self.latency_secs)
                .failing(self.failing.iter().copied()),
        )
    }

    fn simulated_latency(&self) -> bool {
        true
    }
}

pub struct HttpSynthProvider {
    endpoint: Endpoint,
    allow_remote: bool,
}

struct HttpSynth {
    endpoint: Endpoint,
    allow_remote: bool,
    dir: PathBuf,
}

#[derive(Deserialize)]
struct SynthReply {
    media_url: String,
    duration: f64,
}

impl SynthProvider for HttpSynthProvider {
    fn for_session(&self, dir: &Path) -> Box<dyn Synthesizer> {
        Box::new(HttpSynth {
            endpoint: self.endpoint.clone(),
            allow_remote: self.allow_remote,
            dir: dir.to_path_buf(),
        })
    }

    fn simulated_latency(&self) -> bool {
        false
    }
}

impl HttpSynth {
    fn fetch(&self, seq: usize, text: &str, timings: &mut LatencyReport) -> Result<(PathBuf, f64), String> {
        let started = Instant::now();
        let reply: SynthReply = self.endpoint.post_json(&json!({ "text": text }))?;
        timings.set(Stage::Avatar, started.elapsed().as_secs_f64());

        let media = self
            .endpoint
            .url
            .join(&reply.media_url)
            .map_err(|e| format!("bad media_url {:?}: {e}", reply.media_url))?;
        check_adapter_url(media.as_str(), self.allow_remote).map_err(|e| e.to_string())?;
        self.endpoint.log.record(self.endpoint.name, &media);
        let bytes = self
            .endpoint
            .client()?
            .get(media.clone())
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.bytes())
            .map_err(|e| format!("downloading {media}: {e}"))?;

        std::fs::create_dir_all(&self.dir).map_err(|e| format!("{}: {e}", self.dir.display()))?;
        let path = self.dir.join(format!("seg_{seq}.mp4"));
        std::fs::write(&path, &bytes).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok((path, reply.duration))
    }
}

impl Synthesizer for HttpSynth {
    fn synthesize(&self, seq: usize, text: &str) -> Result<SynthClip, SynthError> {
        let started = Instant::now();
        let mut timings = LatencyReport::default();
        let result = self.fetch(seq, text, &mut timings);
        let latency = started.elapsed().as_secs_f64();
        let expected = self.dir.join(format!("seg_{seq}.mp4"));
        match result {
            Ok((path, duration)) => Ok(SynthClip {
                media_ref: path.to_string_lossy().into_owned(),
                duration,
                latency,
                artifacts: vec![path],
                timings,
            }),
            Err(message) => Err(SynthError {
                message,
                latency,
                artifacts: vec![expected],
            }),
        }
    }
}

/// One configured adapter as reported by the health endpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdapterProbe {
    pub adapter: &'static str,
    pub kind: &'static str,
    pub url: Option<String>,
}

/// The backends one service instance runs with.
#[derive(Clone)]
pub struct Adapters {
    pub embedder: Arc<dyn Embedder>,
    pub llm: Arc<dyn LanguageModel>,
    pub asr: Arc<dyn SpeechRecognizer>,
    pub synth: Arc<dyn SynthProvider>,
    pub probes: Vec<AdapterProbe>,
    pub log: ConnectionLog,
}

impl Adapters {
    /// Stub backends throughout, with the embedder matching `meta`.
    pub fn stubs(meta: &StoreMetadata) -> Result<Self, ConfigError> {
        Self::from_config(&AdapterConfig::default(), meta, ConnectionLog::default())
    }

    pub fn from_config(cfg: &AdapterConfig, meta: &StoreMetadata, log: ConnectionLog) -> Result<Self, ConfigError> {
        let endpoint = |name: &'static str, url: &str, timeout: f64| {
            let url = check_adapter_url(url, cfg.allow_remote)?;
            Ok::<_, ConfigError>(Endpoint::new(name, url, timeout, log.clone()))
        };
        let mut probes = Vec::new();
        let mut probe = |adapter, kind, url: Option<&str>| {
            probes.push(AdapterProbe {
                adapter,
                kind,
                url: url.map(String::from),
            })
        };

        let embedder: Arc<dyn Embedder> = match &cfg.embedder {
            EmbedderSpec::Auto => {
                probe("embedder", "builtin", None);
                builtin_embedder(&meta.embedder_name, meta.dimension)?
            }
            EmbedderSpec::Http {
                url,
                model,
                dimension,
                timeout_secs,
            } => {
                probe("embedder", "http", Some(url));
                Arc::new(HttpEmbedder {
                    endpoint: endpoint("embedder", url, *timeout_secs)?,
                    model: model.clone(),
                    dimension: *dimension,
                })
            }
        };
        let llm: Arc<dyn LanguageModel> = match &cfg.llm {
            LlmSpec::Echo => {
                probe("llm", "echo", None);
                Arc::new(EchoModel)
            }
            LlmSpec::Http {
                url,
                timeout_secs,
                max_answer_chars,
            } => {
                probe("llm", "http", Some(url));
                Arc::new(HttpLlm {
                    endpoint: endpoint("llm", url, *timeout_secs)?,
                    max_answer_chars: *max_answer_chars,
                })
            }
        };
        let asr: Arc<dyn SpeechRecognizer> = match &cfg.asr {
            AsrSpec::Stub { table } => {
                probe("asr", "stub", None);
                Arc::new(load_stub_table(table.as_deref())?)
            }
            AsrSpec::Http { url, timeout_secs } => {
                probe("asr", "http", Some(url));
                Arc::new(HttpAsr {
                    endpoint: endpoint("asr", url, *timeout_secs)?,
                })
            }
        };
        let synth: Arc<dyn SynthProvider> = match &cfg.synth {
            SynthSpec::Stub { latency_secs } => {
                probe("synth", "stub", None);
                Arc::new(StubSynthProvider {
                    latency_secs: *latency_secs,
                    failing: Vec::new(),
                })
            }
            SynthSpec::Http { url, timeout_secs } => {
                probe("synth", "http", Some(url));
                Arc::new(HttpSynthProvider {
                    endpoint: endpoint("synth", url, *timeout_secs)?,
                    allow_remote: cfg.allow_remote,
                })
            }
        };
        Ok(Self {
            embedder,
            llm,
            asr,
            synth,
            probes,
            log,
        })
    }
}

/// Instantiates one of the built-in embedders by the name stored in a
/// store's metadata.
pub fn builtin_embedder(name: &str, dimension: usize) -> Result<Arc<dyn Embedder>, ConfigError> {
    let too_small = || ConfigError::Invalid {
        field: "adapters.embedder",
        message: format!("dimension {dimension} is below the built-in minimum"),
    };
    match name {
        StubEmbedder::NAME if dimension >= lectern_core::embed::MIN_STUB_DIMENSION => Ok(Arc::new(StubEmbedder::new(dimension))),
        BagOfWordsEmbedder::NAME if dimension >= lectern_core::embed::MIN_STUB_DIMENSION => {
            Ok(Arc::new(BagOfWordsEmbedder::new(dimension)))
        }
        StubEmbedder::NAME | BagOfWordsEmbedder::NAME => Err(too_small()),
        other => Err(ConfigError::Invalid {
            field: "adapters.embedder",
            message: format!(
                "store was indexed with {other:?}, which is not built in; configure an http embedder with model = {other:?}"
            ),
        }),
    }
}

fn load_stub_table(path: Option<&Path>) -> Result<StubRecognizer, ConfigError> {
    let Some(path) = path else {
        return Ok(StubRecognizer::new());
    };
    let invalid = |message: String| ConfigError::Invalid {
        field: "adapters.asr.table",
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let table: std::collections::BTreeMap<String, String> =
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    Ok(table
        .into_iter()
        .fold(StubRecognizer::new(), |asr, (digest, text)| asr.with_digest(digest, text)))
}

/// Whether the adapter's host accepts TCP connections within `timeout`.
pub fn probe_reachable(url: &str, timeout: Duration, log: &ConnectionLog) -> bool {
    let Ok(url) = Url::parse(url) else {
        return false;
    };
    let (Some(host), Some(port)) = (url.host_str(), url.port_or_known_default()) else {
        return false;
    };
    log.record("health", &url);
    let host = host.trim_start_matches('[').trim_end_matches(']');
    let addrs: Vec<SocketAddr> = match (host, port).to_socket_addrs() {
        Ok(a) => a.collect(),
        Err(_) => return false,
    };
    addrs.iter().any(|a| TcpStream::connect_timeout(a, timeout).is_ok())
}
