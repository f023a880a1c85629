//! Segmented avatar responses: sentence grouping, progressive preloading,
//! synthesis adapters and temp-file cleanup.

pub mod cleanup;
pub mod plan;
pub mod schedule;
pub mod sentences;
pub mod synth;

pub use cleanup::{cleanup_session, CleanupReport, TempResourceRegistry};
pub use plan::{
    plan_playback, NextStep, PlanError, PlaybackPlan, ResponseSegment, SegmentStatus, DEFAULT_LOOKAHEAD,
    DEFAULT_PRELOAD_COUNT,
};
pub use schedule::{run_schedule, stall_intervals, Clock, EventKind, ScheduleEvent, ScheduleOutcome, SimClock, WallClock};
pub use sentences::split_sentences;
pub use synth::{stub_duration, StubSynth, SynthClip, SynthError, Synthesizer};
