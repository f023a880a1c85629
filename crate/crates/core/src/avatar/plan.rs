//! Playback plan and the progressive-preloading rule.
//!
//! Segments play strictly in order. Scheduling follows three rules:
//!
//! 1. At start, the first `preload_count` segments are requested (clamped to
//!    `1..=lookahead + 1`).
//! 2. When segment `i` starts playing, every not-yet-requested segment up to
//!    `i + lookahead` is requested.
//! 3. When playback reaches a segment that was never requested (its turn has
//!    come), it is requested immediately.
//!
//! With the default `lookahead = 2` this is the "play `i` while `i + 2` is
//! generated" rule; with `lookahead = 0` synthesis is fully serial.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_LOOKAHEAD: usize = 2;
pub const DEFAULT_PRELOAD_COUNT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentStatus {
    Pending,
    Synthesizing,
    Ready,
    Playing,
    Done,
    Failed,
}

impl SegmentStatus {
    fn can_become(self, next: SegmentStatus) -> bool {
        use SegmentStatus::*;
        matches!(
            (self, next),
            (Pending, Synthesizing) | (Synthesizing, Ready) | (Ready, Playing) | (Playing, Done)
        ) || (next == Failed && self != Failed && self != Done)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("segment {seq} cannot go from {from:?} to {to:?}")]
    Transition {
        seq: usize,
        from: SegmentStatus,
        to: SegmentStatus,
    },
    #[error("no segment {0}")]
    UnknownSegment(usize),
    #[error("segment {seq} is not next in line (next is {expected})")]
    OutOfOrder { seq: usize, expected: usize },
    #[error("a plan needs at least one segment")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSegment {
    pub seq: usize,
    pub text: String,
    pub status: SegmentStatus,
    pub media_ref: Option<String>,
    pub duration: Option<f64>,
}

impl ResponseSegment {
    fn set_status(&mut self, to: SegmentStatus) -> Result<(), PlanError> {
        if !self.status.can_become(to) {
            return Err(PlanError::Transition {
                seq: self.seq,
                from: self.status,
                to,
            });
        }
        self.status = to;
        if to == SegmentStatus::Failed {
            self.media_ref = None;
        }
        Ok(())
    }
}

/// What playback should do next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextStep {
    Play(usize),
    Skip(usize),
    /// The segment due next is still being synthesized.
    Wait(usize),
    /// The given segment is playing.
    Busy(usize),
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackPlan {
    pub segments: Vec<ResponseSegment>,
    pub playing_index: Option<usize>,
    pub lookahead: usize,
    pub preload_count: usize,
    /// Next segment due to play (or playing). Everything before it is done or failed.
    cursor: usize,
    started: bool,
}

pub fn plan_playback(texts: &[String], lookahead: usize, preload_count: usize) -> Result<PlaybackPlan, PlanError> {
    if texts.is_empty() {
        return Err(PlanError::Empty);
    }
    Ok(PlaybackPlan {
        segments: texts
            .iter()
            .enumerate()
            .map(|(seq, text)| ResponseSegment {
                seq,
                text: text.clone(),
                status: SegmentStatus::Pending,
                media_ref: None,
                duration: None,
            })
            .collect(),
        playing_index: None,
        lookahead,
        preload_count,
        cursor: 0,
        started: false,
    })
}

impl PlaybackPlan {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Preload count actually used: at least one segment, and never more
    /// than the in-flight bound allows.
    pub fn effective_preload(&self) -> usize {
        self.preload_count.clamp(1, self.lookahead + 1).min(self.len())
    }

    pub fn segment(&self, seq: usize) -> Result<&ResponseSegment, PlanError> {
        self.segments.get(seq).ok_or(PlanError::UnknownSegment(seq))
    }

    fn segment_mut(&mut self, seq: usize) -> Result<&mut ResponseSegment, PlanError> {
        self.segments.get_mut(seq).ok_or(PlanError::UnknownSegment(seq))
    }

    fn request(&mut self, seqs: impl IntoIterator<Item = usize>) -> Vec<usize> {
        let mut out = Vec::new();
        for seq in seqs {
            if let Some(seg) = self.segments.get_mut(seq) {
                if seg.status == SegmentStatus::Pending {
                    seg.status = SegmentStatus::Synthesizing;
                    out.push(seq);
                }
            }
        }
        out
    }

    /// Marks the eager preload window as synthesizing and returns it.
    /// Calling it again returns nothing.
    pub fn start(&mut self) -> Vec<usize> {
        if self.started {
            return Vec::new();
        }
        self.started = true;
        self.request(0..self.effective_preload())
    }

    pub fn mark_ready(&mut self, seq: usize, media_ref: impl Into<String>, duration: f64) -> Result<(), PlanError> {
        let seg = self.segment_mut(seq)?;
        seg.set_status(SegmentStatus::Ready)?;
        seg.media_ref = Some(media_ref.into());
        seg.duration = Some(duration);
        Ok(())
    }

    pub fn mark_failed(&mut self, seq: usize) -> Result<(), PlanError> {
        if self.playing_index == Some(seq) {
            self.playing_index = None;
        }
        self.segment_mut(seq)?.set_status(SegmentStatus::Failed)
    }

    pub fn next_step(&self) -> NextStep {
        if let Some(seq) = self.playing_index {
            return NextStep::Busy(seq);
        }
        match self.segments.get(self.cursor) {
            None => NextStep::Finished,
            Some(seg) => match seg.status {
                SegmentStatus::Ready => NextStep::Play(seg.seq),
                SegmentStatus::Failed => NextStep::Skip(seg.seq),
                _ => NextStep::Wait(seg.seq),
            },
        }
    }

    fn expect_cursor(&self, seq: usize) -> Result<(), PlanError> {
        if seq != self.cursor {
            return Err(PlanError::OutOfOrder {
                seq,
                expected: self.cursor,
            });
        }
        Ok(())
    }

    /// `seq` starts playing. Returns the segments newly requested.
    pub fn start_playing(&mut self, seq: usize) -> Result<Vec<usize>, PlanError> {
        self.expect_cursor(seq)?;
        self.segment_mut(seq)?.set_status(SegmentStatus::Playing)?;
        self.playing_index = Some(seq);
        Ok(self.request(seq + 1..=seq + self.lookahead))
    }

    /// `seq` finished playing. Returns the segments newly requested.
    pub fn finish_playing(&mut self, seq: usize) -> Result<Vec<usize>, PlanError> {
        self.expect_cursor(seq)?;
        self.segment_mut(seq)?.set_status(SegmentStatus::Done)?;
        self.playing_index = None;
        Ok(self.advance())
    }

    /// Steps over a failed segment. Returns the segments newly requested.
    pub fn skip_failed(&mut self, seq: usize) -> Result<Vec<usize>, PlanError> {
        self.expect_cursor(seq)?;
        let seg = self.segment(seq)?;
        if seg.status != SegmentStatus::Failed {
            return Err(PlanError::Transition {
                seq,
                from: seg.status,
                to: SegmentStatus::Failed,
            });
        }
        Ok(self.advance())
    }

    fn advance(&mut self) -> Vec<usize> {
        self.cursor += 1;
        self.request([self.cursor])
    }

    /// Segments being synthesized past the playback position: the playing
    /// segment if any, otherwise the one playback is waiting on.
    pub fn in_flight_beyond_cursor(&self) -> usize {
        let anchor = self.playing_index.unwrap_or(self.cursor);
        self.segments
            .iter()
            .filter(|s| s.seq > anchor && s.status == SegmentStatus::Synthesizing)
            .count()
    }

    pub fn is_finished(&self) -> bool {
        self.next_step() == NextStep::Finished
    }
}
