//! Service configuration, read from a TOML document.
//!
//! ```toml
//! bind = "127.0.0.1"
//! port = 8750
//!
//! [retrieval]
//! lambda = 0.1
//! top_K = 20
//! top_k = 4
//!
//! [avatar]
//! lookahead = 2
//! preload_count = 2
//! workers = 2
//!
//! [session]
//! ttl_secs = 900
//!
//! [adapters]
//! llm = { kind = "http", url = "http://127.0.0.1:8081/complete" }
//! ```

use std::net::IpAddr;
use std::path::{Path, PathBuf};

use lectern_core::avatar::plan::{DEFAULT_LOOKAHEAD, DEFAULT_PRELOAD_COUNT};
use lectern_core::RetrievalConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

pub const DEFAULT_PORT: u16 = 8750;
pub const DEFAULT_TTL_SECS: u64 = 900;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("invalid {field}: {message}")]
    Invalid { field: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: IpAddr,
    pub port: u16,
    /// Directory of UI assets served at `/`, if any.
    pub static_dir: Option<PathBuf>,
    pub retrieval: RetrievalConfig,
    pub avatar: AvatarConfig,
    pub session: SessionConfig,
    pub adapters: AdapterConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: IpAddr::from([127, 0, 0, 1]),
            port: DEFAULT_PORT,
            static_dir: None,
            retrieval: RetrievalConfig::default(),
            avatar: AvatarConfig::default(),
            session: SessionConfig::default(),
            adapters: AdapterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvatarConfig {
    pub lookahead: usize,
    pub preload_count: usize,
    /// Concurrent synthesis calls across all sessions.
    pub workers: usize,
    /// Parent of the per-session media directories.
    pub media_root: PathBuf,
}

impl Default for AvatarConfig {
    fn default() -> Self {
        Self {
            lookahead: DEFAULT_LOOKAHEAD,
            preload_count: DEFAULT_PRELOAD_COUNT,
            workers: 2,
            media_root: std::env::temp_dir().join("alive"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Idle seconds before a session is cleaned up automatically.
    pub ttl_secs: u64,
    /// How often expired sessions are looked for.
    pub sweep_secs: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            ttl_secs: DEFAULT_TTL_SECS,
            sweep_secs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    /// Permit adapter URLs that are not loopback addresses.
    pub allow_remote: bool,
    pub embedder: EmbedderSpec,
    pub llm: LlmSpec,
    pub asr: AsrSpec,
    pub synth: SynthSpec,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            allow_remote: false,
            embedder: EmbedderSpec::Auto,
            llm: LlmSpec::Echo,
            asr: AsrSpec::Stub { table: None },
            synth: SynthSpec::Stub { latency_secs: 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderSpec {
    /// The built-in embedder the store was indexed with.
    Auto,
    Http {
        url: String,
        /// Name recorded in the store metadata.
        model: String,
        dimension: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LlmSpec {
    Echo,
    Http {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default)]
        max_answer_chars: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AsrSpec {
    /// Fixed transcripts keyed by the SHA-256 of the WAV bytes, read from a
    /// JSON object `{"<hex digest>": "text"}`.
    Stub { table: Option<PathBuf> },
    Http {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SynthSpec {
    /// Placeholder media; each clip takes `latency_secs` of wall time.
    Stub {
        #[serde(default)]
        latency_secs: f64,
    },
    Http {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

fn default_timeout() -> f64 {
    120.0
}

impl ServiceConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.retrieval.validate().map_err(|e| ConfigError::Invalid {
            field: "retrieval",
            message: e.to_string(),
        })?;
        if self.avatar.workers == 0 {
            return Err(ConfigError::Invalid {
                field: "avatar.workers",
                message: "must be at least 1".into(),
            });
        }
        if self.session.ttl_secs == 0 || self.session.sweep_secs == 0 {
            return Err(ConfigError::Invalid {
                field: "session",
                message: "ttl_secs and sweep_secs must be positive".into(),
            });
        }
        for url in self.adapters.urls() {
            check_adapter_url(url, self.adapters.allow_remote)?;
        }
        Ok(())
    }
}

impl AdapterConfig {
    pub fn urls(&self) -> Vec<&str> {
        let mut out = Vec::new();
        if let EmbedderSpec::Http { url, .. } = &self.embedder {
            out.push(url.as_str());
        }
        if let LlmSpec::Http { url, .. } = &self.llm {
            out.push(url.as_str());
        }
        if let AsrSpec::Http { url, .. } = &self.asr {
            out.push(url.as_str());
        }
        if let SynthSpec::Http { url, .. } = &self.synth {
            out.push(url.as_str());
        }
        out
    }
}

/// Adapter URLs must be `http` and, unless remote hosts are allowed,
/// resolve to a loopback address.
pub fn check_adapter_url(raw: &str, allow_remote: bool) -> Result<Url, ConfigError> {
    let invalid = |message: String| ConfigError::Invalid {
        field: "adapters",
        message,
    };
    let url = Url::parse(raw).map_err(|e| invalid(format!("{raw}: {e}")))?;
    if url.scheme() != "http" {
        return Err(invalid(format!("{raw}: only http:// adapters are supported")));
    }
    if !allow_remote && !is_loopback(&url) {
        return Err(invalid(format!(
            "{raw}: not a loopback address (set adapters.allow_remote to permit)"
        )));
    }
    Ok(url)
}

pub fn is_loopback(url: &Url) -> bool {
    match url.host() {
        Some(url::Host::Domain(d)) => d.eq_ignore_ascii_case("localhost"),
        Some(url::Host::Ipv4(ip)) => ip.is_loopback(),
        Some(url::Host::Ipv6(ip)) => ip.is_loopback(),
        None => false,
    }
}
