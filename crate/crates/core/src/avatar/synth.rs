//! Speech + talking-head synthesis adapter and the built-in stub.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::audio::silent_wav;
use crate::latency::{LatencyReport, Stage};

/// Seconds of stub media per character of text (roughly 165 chars/min of speech).
pub const STUB_SECONDS_PER_CHAR: f64 = 0.06;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub media_ref: String,
    /// Playback length in seconds.
    pub duration: f64,
    /// Seconds the synthesis took (modelled for stubs, measured otherwise).
    pub latency: f64,
    /// Files created for this clip, to be removed at cleanup.
    pub artifacts: Vec<PathBuf>,
    pub timings: LatencyReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthError {
    pub message: String,
    pub latency: f64,
    pub artifacts: Vec<PathBuf>,
}

impl std::fmt::Display for SynthError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for SynthError {}

pub trait Synthesizer: Send + Sync {
    fn synthesize(&self, seq: usize, text: &str) -> Result<SynthClip, SynthError>;

    fn latency_hint(&self) -> Option<f64> {
        None
    }
}

pub fn stub_duration(text: &str) -> f64 {
    STUB_SECONDS_PER_CHAR * text.chars().count() as f64
}

/// Deterministic synthesizer for tests, simulations and offline runs.
///
/// With an output directory it writes a silent WAV (`seg_<seq>.wav`) and a
/// placeholder MP4 (`seg_<seq>.mp4`) per segment; without one it produces
/// `stub://` references only. Latency, duration and failures can be scripted
/// per segment.
#[derive(Debug, Clone, Default)]
pub struct StubSynth {
    out_dir: Option<PathBuf>,
    latency: f64,
    latencies: HashMap<usize, f64>,
    durations: HashMap<usize, f64>,
    failures: HashSet<usize>,
}

impl StubSynth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn writing_to(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn with_latency(mut self, seconds: f64) -> Self {
        self.latency = seconds;
        self
    }

    pub fn with_latencies(mut self, per_seq: impl IntoIterator<Item = f64>) -> Self {
        self.latencies = per_seq.into_iter().enumerate().collect();
        self
    }

    pub fn with_durations(mut self, per_seq: impl IntoIterator<Item = f64>) -> Self {
        self.durations = per_seq.into_iter().enumerate().collect();
        self
    }

    pub fn failing(mut self, seqs: impl IntoIterator<Item = usize>) -> Self {
        self.failures.extend(seqs);
        self
    }

    fn latency_for(&self, seq: usize) -> f64 {
        self.latencies.get(&seq).copied().unwrap_or(self.latency)
    }
}

impl Synthesizer for StubSynth {
    fn synthesize(&self, seq: usize, text: &str) -> Result<SynthClip, SynthError> {
        let latency = self.latency_for(seq);
        if self.failures.contains(&seq) {
            return Err(SynthError {
                message: format!("stub failure for segment {seq}"),
                latency,
                artifacts: Vec::new(),
            });
        }
        let duration = self.durations.get(&seq).copied().unwrap_or_else(|| stub_duration(text));
        let mut timings = LatencyReport::default();

        let Some(dir) = &self.out_dir else {
            timings.set(Stage::Tts, 0.0);
            timings.set(Stage::Avatar, 0.0);
            return Ok(SynthClip {
                media_ref: format!("stub://seg_{seq}.mp4"),
                duration,
                latency,
                artifacts: Vec::new(),
                timings,
            });
        };

        let fail = |message: String, artifacts: Vec<PathBuf>| SynthError {
            message,
            latency,
            artifacts,
        };
        fs::create_dir_all(dir).map_err(|e| fail(format!("{}: {e}", dir.display()), vec![]))?;

        let audio_path = dir.join(format!("seg_{seq}.wav"));
        let started = Instant::now();
        let wav = silent_wav(duration);
        fs::write(&audio_path, &wav).map_err(|e| fail(format!("{}: {e}", audio_path.display()), vec![]))?;
        timings.set(Stage::Tts, started.elapsed().as_secs_f64());

        let video_path = dir.join(format!("seg_{seq}.mp4"));
        let started = Instant::now();
        fs::write(&video_path, placeholder_mp4(&wav))
            .map_err(|e| fail(format!("{}: {e}", video_path.display()), vec![audio_path.clone()]))?;
        timings.set(Stage::Avatar, started.elapsed().as_secs_f64());

        Ok(SynthClip {
            media_ref: video_path.to_string_lossy().into_owned(),
            duration,
            latency,
            artifacts: vec![audio_path, video_path],
            timings,
        })
    }

    fn latency_hint(&self) -> Option<f64> {
        Some(self.latency)
    }
}

/// `ftyp` box followed by an `mdat` box carrying the given payload. Enough
/// for content sniffing and byte-range serving; not decodable video.
pub fn placeholder_mp4(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 40);
    let ftyp: &[u8] = b"isom\x00\x00\x02\x00isomiso2mp41";
    out.extend_from_slice(&((ftyp.len() + 8) as u32).to_be_bytes());
    out.extend_from_slice(b"ftyp");
    out.extend_from_slice(ftyp);
    out.extend_from_slice(&((payload.len() + 8) as u32).to_be_bytes());
    out.extend_from_slice(b"mdat");
    out.extend_from_slice(payload);
    out
}

/// `<root>/<session_id>`, the per-session media directory.
pub fn session_dir(root: &Path, session_id: &str) -> PathBuf {
    root.join(session_id)
}
