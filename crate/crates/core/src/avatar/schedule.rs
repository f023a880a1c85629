//! Discrete-event driver for a playback plan.
//!
//! Synthesis requests are issued to the adapter as the plan asks for them;
//! a request made at time `t` completes at `t + latency`. Playback of a
//! segment occupies `duration` seconds. Time comes from an injectable
//! [`Clock`], so the same driver runs against a simulated clock in tests and
//! a wall clock in demos.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::Serialize;
use tracing::warn;

use super::plan::{NextStep, PlanError, PlaybackPlan};
use super::synth::{SynthClip, SynthError, Synthesizer};

pub trait Clock {
    fn now(&self) -> f64;
    fn advance_to(&mut self, t: f64);
}

/// Simulated clock; `advance_to` jumps instantly.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimClock {
    now: f64,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for SimClock {
    fn now(&self) -> f64 {
        self.now
    }

    fn advance_to(&mut self, t: f64) {
        if t > self.now {
            self.now = t;
        }
    }
}

/// Real time since construction; `advance_to` sleeps.
#[derive(Debug, Clone, Copy)]
pub struct WallClock {
    origin: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }

    fn advance_to(&mut self, t: f64) {
        let wait = t - self.now();
        if wait > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RequestSynth,
    Ready,
    SynthFailed,
    PlayStart,
    PlayEnd,
    FailedSkip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleEvent {
    pub time: f64,
    pub kind: EventKind,
    pub seq: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScheduleOutcome {
    pub events: Vec<ScheduleEvent>,
    /// Every file any synthesis call produced, successful or not.
    pub artifacts: Vec<PathBuf>,
    /// Largest in-flight count past the playback position seen during the run.
    pub max_in_flight: usize,
}

impl ScheduleOutcome {
    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &ScheduleEvent> + '_ {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn play_order(&self) -> Vec<usize> {
        self.of_kind(EventKind::PlayStart).map(|e| e.seq).collect()
    }

    pub fn first_play_start(&self) -> Option<f64> {
        self.of_kind(EventKind::PlayStart).next().map(|e| e.time)
    }

    /// Gaps between one segment ending and the next one starting.
    pub fn stalls(&self) -> Vec<(f64, f64)> {
        stall_intervals(&self.events)
    }
}

pub fn stall_intervals(events: &[ScheduleEvent]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut idle_since: Option<f64> = None;
    for e in events {
        match e.kind {
            EventKind::PlayEnd => idle_since = Some(e.time),
            EventKind::PlayStart => {
                if let Some(since) = idle_since.take() {
                    if e.time > since {
                        out.push((since, e.time));
                    }
                }
            }
            _ => {}
        }
    }
    out
}

#[derive(Debug)]
enum Pending {
    Synth(usize, Result<SynthClip, SynthError>),
    PlayEnd(usize),
}

impl Pending {
    fn rank(&self) -> (u8, usize) {
        match self {
            Pending::Synth(seq, _) => (0, *seq),
            Pending::PlayEnd(seq) => (1, *seq),
        }
    }
}

struct Queued {
    time: f64,
    event: Pending,
}

// Min-heap on (time, kind, seq).
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.event.rank().cmp(&self.event.rank()))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

struct Driver<'a> {
    plan: &'a mut PlaybackPlan,
    synth: &'a dyn Synthesizer,
    queue: BinaryHeap<Queued>,
    out: ScheduleOutcome,
}

impl Driver<'_> {
    fn log(&mut self, time: f64, kind: EventKind, seq: usize) {
        self.out.events.push(ScheduleEvent { time, kind, seq });
        self.out.max_in_flight = self.out.max_in_flight.max(self.plan.in_flight_beyond_cursor());
    }

    fn request(&mut self, now: f64, seqs: Vec<usize>) {
        for seq in seqs {
            self.log(now, EventKind::RequestSynth, seq);
            let text = self.plan.segments[seq].text.clone();
            let result = self.synth.synthesize(seq, &text);
            let latency = match &result {
                Ok(clip) => {
                    self.out.artifacts.extend(clip.artifacts.iter().cloned());
                    clip.latency
                }
                Err(err) => {
                    self.out.artifacts.extend(err.artifacts.iter().cloned());
                    err.latency
                }
            };
            self.queue.push(Queued {
                time: now + latency.max(0.0),
                event: Pending::Synth(seq, result),
            });
        }
    }

    fn advance_playback(&mut self, now: f64) -> Result<bool, PlanError> {
        loop {
            match self.plan.next_step() {
                NextStep::Play(seq) => {
                    let duration = self.plan.segments[seq].duration.unwrap_or(0.0);
                    let requests = self.plan.start_playing(seq)?;
                    self.log(now, EventKind::PlayStart, seq);
                    self.request(now, requests);
                    self.queue.push(Queued {
                        time: now + duration.max(0.0),
                        event: Pending::PlayEnd(seq),
                    });
                }
                NextStep::Skip(seq) => {
                    let requests = self.plan.skip_failed(seq)?;
                    self.log(now, EventKind::FailedSkip, seq);
                    self.request(now, requests);
                }
                NextStep::Wait(_) | NextStep::Busy(_) => return Ok(false),
                NextStep::Finished => return Ok(true),
            }
        }
    }
}

/// Drives `plan` to completion against `synth`, returning the event log.
pub fn run_schedule(
    plan: &mut PlaybackPlan,
    synth: &dyn Synthesizer,
    clock: &mut dyn Clock,
) -> Result<ScheduleOutcome, PlanError> {
    let mut driver = Driver {
        plan,
        synth,
        queue: BinaryHeap::new(),
        out: ScheduleOutcome::default(),
    };
    let mut now = clock.now();
    let initial = driver.plan.start();
    driver.request(now, initial);

    while !driver.advance_playback(now)? {
        let Some(next) = driver.queue.pop() else {
            // Nothing in flight and nothing playable: the plan cannot progress.
            warn!("schedule stalled with no pending work at cursor {}", driver.plan.cursor());
            break;
        };
        clock.advance_to(next.time);
        now = next.time;
        match next.event {
            Pending::Synth(seq, Ok(clip)) => {
                driver.plan.mark_ready(seq, clip.media_ref, clip.duration)?;
                driver.log(now, EventKind::Ready, seq);
            }
            Pending::Synth(seq, Err(err)) => {
                warn!("synthesis of segment {seq} failed: {err}");
                driver.plan.mark_failed(seq)?;
                driver.log(now, EventKind::SynthFailed, seq);
            }
            Pending::PlayEnd(seq) => {
                let requests = driver.plan.finish_playing(seq)?;
                driver.log(now, EventKind::PlayEnd, seq);
                driver.request(now, requests);
            }
        }
    }
    Ok(driver.out)
}
