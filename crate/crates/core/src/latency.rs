use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

/// Processing stages reported in latency breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Asr,
    Retrieval,
    Llm,
    Tts,
    Avatar,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Asr, Stage::Retrieval, Stage::Llm, Stage::Tts, Stage::Avatar];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Asr => "asr",
            Stage::Retrieval => "retrieval",
            Stage::Llm => "llm",
            Stage::Tts => "tts",
            Stage::Avatar => "avatar",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-stage durations in seconds. Stages that did not run are absent, not zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tts: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avatar: Option<f64>,
}

impl LatencyReport {
    pub fn get(&self, stage: Stage) -> Option<f64> {
        match stage {
            Stage::Asr => self.asr,
            Stage::Retrieval => self.retrieval,
            Stage::Llm => self.llm,
            Stage::Tts => self.tts,
            Stage::Avatar => self.avatar,
        }
    }

    pub fn set(&mut self, stage: Stage, seconds: f64) {
        let slot = match stage {
            Stage::Asr => &mut self.asr,
            Stage::Retrieval => &mut self.retrieval,
            Stage::Llm => &mut self.llm,
            Stage::Tts => &mut self.tts,
            Stage::Avatar => &mut self.avatar,
        };
        *slot = Some(seconds.max(0.0));
    }

    pub fn total(&self) -> f64 {
        Stage::ALL.iter().filter_map(|&s| self.get(s)).sum()
    }

    /// Runs `f`, recording its wall time under `stage`.
    pub fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let started = Instant::now();
        let out = f();
        self.set(stage, started.elapsed().as_secs_f64());
        out
    }
}
