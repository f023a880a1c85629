//! One question-answer turn: optional transcription, retrieval, grounded
//! prompt, language model.
//!
//! Turns are stateless. Nothing here writes to disk; the only state a turn
//! touches is the read-only store.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio::{decode_wav, AudioError};
use crate::embed::Embedder;
use crate::latency::{LatencyReport, Stage};
use crate::retrieval::{retrieve, QueryContext, RetrievalConfig, RetrievalError, ScoredSegment};
use crate::store::RagStore;

/// Bumped whenever the rendered prompt layout changes.
pub const PROMPT_TEMPLATE_VERSION: u32 = 1;

pub const SYSTEM_INSTRUCTION: &str = "You are a teaching assistant for a recorded lecture. \
Answer the student's question using only the lecture excerpts below. \
If the excerpts are insufficient to answer, say so.";

pub const NO_EXCERPTS_MARKER: &str = "(no excerpts available)";

const EXCERPTS_HEADING: &str = "Lecture excerpts:";
const QUESTION_HEADING: &str = "Student question:";

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("{0}")]
    Backend(String),
    #[error("adapter returned an empty answer")]
    EmptyAnswer,
}

#[derive(Debug, Error)]
pub enum QaError {
    #[error(transparent)]
    Query(RetrievalError),
    #[error("{stage} stage failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

impl QaError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            QaError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

impl From<RetrievalError> for QaError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Embed(_) | RetrievalError::Index(_) => QaError::Stage {
                stage: Stage::Retrieval,
                message: e.to_string(),
            },
            other => QaError::Query(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub text: String,
    pub confident: bool,
}

/// Speech-recognition adapter. Input is a WAV file.
pub trait SpeechRecognizer: Send + Sync {
    fn transcribe(&self, wav: &[u8]) -> Result<Transcript, AdapterError>;

    fn serialized(&self) -> bool {
        false
    }
}

/// Table-driven recognizer keyed by the SHA-256 of the audio bytes.
/// Unknown audio is reported as an empty, low-confidence transcript.
#[derive(Debug, Clone, Default)]
pub struct StubRecognizer {
    table: HashMap<String, String>,
}

impl StubRecognizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_entry(mut self, wav: &[u8], text: impl Into<String>) -> Self {
        self.table.insert(audio_digest(wav), text.into());
        self
    }

    /// Adds an entry by hex digest, as written in configuration files.
    pub fn with_digest(mut self, digest: impl Into<String>, text: impl Into<String>) -> Self {
        self.table.insert(digest.into().to_ascii_lowercase(), text.into());
        self
    }
}

pub fn audio_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl SpeechRecognizer for StubRecognizer {
    fn transcribe(&self, wav: &[u8]) -> Result<Transcript, AdapterError> {
        Ok(match self.table.get(&audio_digest(wav)) {
            Some(text) => Transcript {
                text: text.clone(),
                confident: true,
            },
            None => Transcript {
                text: String::new(),
                confident: false,
            },
        })
    }
}

/// Language-model adapter.
pub trait LanguageModel: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, AdapterError>;

    fn max_answer_chars(&self) -> usize {
        4000
    }

    fn serialized(&self) -> bool {
        false
    }
}

/// Answers with the first sentence of the first excerpt in the prompt, or a
/// fixed insufficiency message when there are none.
#[derive(Debug, Clone, Default)]
pub struct EchoModel;

pub const ECHO_NO_CONTEXT_ANSWER: &str = "The lecture excerpts do not cover this question.";

impl LanguageModel for EchoModel {
    fn complete(&self, prompt: &str) -> Result<String, AdapterError> {
        let excerpt = prompt
            .lines()
            .skip_while(|l| *l != EXCERPTS_HEADING)
            .skip(1)
            .take_while(|l| !l.is_empty())
            .find_map(|l| l.strip_prefix('[').and_then(|rest| rest.split_once("] ")).map(|(_, text)| text));
        Ok(match excerpt {
            Some(text) => first_sentence(text).to_string(),
            None => ECHO_NO_CONTEXT_ANSWER.to_string(),
        })
    }
}

fn first_sentence(text: &str) -> &str {
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if matches!(b, b'.' | b'!' | b'?') && bytes.get(i + 1).is_none_or(|n| n.is_ascii_whitespace()) {
            return &text[..=i];
        }
    }
    text
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub segment_id: String,
    pub start: f64,
    pub end: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_instruction: String,
    pub evidence: Vec<EvidenceItem>,
    pub question: String,
    pub rendered: String,
}

/// `mm:ss`, minutes unbounded, seconds truncated.
pub fn format_mm_ss(seconds: f64) -> String {
    let whole = seconds.max(0.0).floor() as u64;
    format!("{:02}:{:02}", whole / 60, whole % 60)
}

/// Renders the grounded prompt. Excerpts keep retrieval order and carry a
/// `[mm:ss–mm:ss]` prefix.
pub fn build_prompt(retrieved: &[ScoredSegment], question: &str) -> PromptBundle {
    let evidence: Vec<EvidenceItem> = retrieved
        .iter()
        .map(|s| EvidenceItem {
            segment_id: s.segment.segment_id.clone(),
            start: s.segment.start,
            end: s.segment.end,
            text: s.segment.text.clone(),
        })
        .collect();

    let mut rendered = String::new();
    rendered.push_str(SYSTEM_INSTRUCTION);
    rendered.push_str("\n\n");
    rendered.push_str(EXCERPTS_HEADING);
    rendered.push('\n');
    if evidence.is_empty() {
        rendered.push_str(NO_EXCERPTS_MARKER);
        rendered.push('\n');
    }
    for item in &evidence {
        rendered.push_str(&format!(
            "[{}–{}] {}\n",
            format_mm_ss(item.start),
            format_mm_ss(item.end),
            item.text
        ));
    }
    rendered.push('\n');
    rendered.push_str(QUESTION_HEADING);
    rendered.push(' ');
    rendered.push_str(question);
    rendered.push_str("\n\nAnswer:");

    PromptBundle {
        system_instruction: SYSTEM_INSTRUCTION.to_string(),
        evidence,
        question: question.to_string(),
        rendered,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Answer {
    pub text: String,
    pub evidence_ids: Vec<String>,
    pub evidence: Vec<ScoredSegment>,
    pub timings: LatencyReport,
}

/// Runs retrieval, builds the prompt and asks the model.
pub fn answer_question(
    store: &RagStore,
    embedder: &dyn Embedder,
    llm: &dyn LanguageModel,
    ctx: &QueryContext,
    cfg: &RetrievalConfig,
) -> Result<Answer, QaError> {
    ctx.validate()?;
    cfg.validate()?;

    let mut timings = LatencyReport::default();
    let retrieved = timings.time(Stage::Retrieval, || retrieve(store, embedder, ctx, cfg))?;
    let prompt = build_prompt(&retrieved, &ctx.question);

    let text = timings
        .time(Stage::Llm, || llm.complete(&prompt.rendered))
        .and_then(|t| if t.trim().is_empty() { Err(AdapterError::EmptyAnswer) } else { Ok(t) })
        .map_err(|e| QaError::Stage {
            stage: Stage::Llm,
            message: e.to_string(),
        })?;
    let text = truncate_chars(&text, llm.max_answer_chars());

    Ok(Answer {
        text,
        evidence_ids: prompt.evidence.iter().map(|e| e.segment_id.clone()).collect(),
        evidence: retrieved,
        timings,
    })
}

fn truncate_chars(text: &str, max: usize) -> String {
    match text.char_indices().nth(max) {
        Some((cut, _)) => text[..cut].to_string(),
        None => text.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", content = "text", rename_all = "snake_case")]
pub enum VoiceQuery {
    Transcript(String),
    NoSpeech,
}

/// Validates the WAV, transcribes it, and maps empty or low-confidence
/// output to [`VoiceQuery::NoSpeech`] so the caller can ask for a retry.
pub fn transcribe_voice_query(asr: &dyn SpeechRecognizer, audio: &[u8]) -> Result<VoiceQuery, QaError> {
    decode_wav(audio)?;
    let transcript = asr.transcribe(audio).map_err(|e| QaError::Stage {
        stage: Stage::Asr,
        message: e.to_string(),
    })?;
    let text = transcript.text.trim();
    if text.is_empty() || !transcript.confident {
        Ok(VoiceQuery::NoSpeech)
    } else {
        Ok(VoiceQuery::Transcript(text.to_string()))
    }
}
