//! In-memory session table. Nothing here is ever written to the store.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use lectern_core::avatar::cleanup::{cleanup_session, CleanupReport, TempResourceRegistry};
use lectern_core::avatar::plan::{NextStep, PlanError, PlaybackPlan};
use lectern_core::avatar::schedule::{EventKind, ScheduleEvent};
use lectern_core::avatar::synth::{session_dir, Synthesizer};
use serde::Deserialize;
use tracing::{info, warn};

/// Source of "now"; injectable so TTL expiry can be tested without waiting.
pub type NowFn = Arc<dyn Fn() -> Instant + Send + Sync>;

pub fn system_now() -> NowFn {
    Arc::new(Instant::now)
}

/// Longest a close or answer replacement waits for running synthesis calls.
pub const WRITER_WAIT: Duration = Duration::from_secs(60);

/// Counts synthesis calls currently writing into a session directory.
#[derive(Debug, Default)]
pub struct InFlight {
    count: Mutex<usize>,
    idle: Condvar,
}

/// Held for the duration of one synthesis call.
pub struct WriterGuard(Arc<InFlight>);

impl InFlight {
    pub fn enter(self: &Arc<Self>) -> WriterGuard {
        *self.count.lock().unwrap() += 1;
        WriterGuard(self.clone())
    }

    pub fn active(&self) -> usize {
        *self.count.lock().unwrap()
    }

    /// Blocks until no call is running or `timeout` passes; true when idle.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let count = self.count.lock().unwrap();
        let (count, _) = self.idle.wait_timeout_while(count, timeout, |n| *n > 0).unwrap();
        *count == 0
    }
}

impl Drop for WriterGuard {
    fn drop(&mut self) {
        let mut count = self.0.count.lock().unwrap();
        *count -= 1;
        if *count == 0 {
            self.0.idle.notify_all();
        }
    }
}

pub struct Session {
    pub id: String,
    pub lecture_id: Option<String>,
    pub created: Instant,
    pub last_active: Instant,
    pub registry: TempResourceRegistry,
    pub plan: Option<PlaybackPlan>,
    /// Bumped whenever a new answer replaces the plan; synthesis results
    /// tagged with an older generation are discarded.
    pub generation: u64,
    pub synth: Option<Arc<dyn Synthesizer>>,
    pub events: Vec<ScheduleEvent>,
    pub closed: bool,
    /// Synthesis calls are only started while the session is open and
    /// their generation is current; both checks and `enter` happen under the
    /// session lock, so closing then waiting here leaves no writer behind.
    pub in_flight: Arc<InFlight>,
}

impl Session {
    pub fn dir(&self) -> &Path {
        self.registry.root().expect("session registries always have a root")
    }

    pub fn log(&mut self, now: Instant, kind: EventKind, seq: usize) {
        let time = now.saturating_duration_since(self.created).as_secs_f64();
        self.events.push(ScheduleEvent { time, kind, seq });
    }
}

pub type SessionHandle = Arc<Mutex<Session>>;

pub struct SessionManager {
    sessions: Mutex<HashMap<String, SessionHandle>>,
    media_root: PathBuf,
    ttl: Duration,
    now: NowFn,
}

pub fn new_session_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

impl SessionManager {
    pub fn new(media_root: impl Into<PathBuf>, ttl: Duration, now: NowFn) -> Self {
        Self {
            sessions: Mutex::new(HashMap::new()),
            media_root: media_root.into(),
            ttl,
            now,
        }
    }

    pub fn now(&self) -> Instant {
        (self.now)()
    }

    pub fn media_root(&self) -> &Path {
        &self.media_root
    }

    pub fn create(&self, lecture_id: Option<String>) -> (String, SessionHandle) {
        let id = new_session_id();
        let now = self.now();
        let session = Session {
            registry: TempResourceRegistry::with_root(&id, session_dir(&self.media_root, &id)),
            id: id.clone(),
            lecture_id,
            created: now,
            last_active: now,
            plan: None,
            generation: 0,
            synth: None,
            events: Vec::new(),
            closed: false,
            in_flight: Arc::default(),
        };
        let handle = Arc::new(Mutex::new(session));
        self.sessions.lock().unwrap().insert(id.clone(), handle.clone());
        info!(session = %id, "session opened");
        (id, handle)
    }

    /// Looks a session up and marks it active.
    pub fn get(&self, id: &str) -> Option<SessionHandle> {
        let handle = self.sessions.lock().unwrap().get(id).cloned()?;
        handle.lock().unwrap().last_active = self.now();
        Some(handle)
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.lock().unwrap().keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Removes the session and deletes its media. Unknown ids yield an empty
    /// report. Blocks while synthesis calls for the session finish, so call
    /// it off the async executor.
    pub fn close(&self, id: &str) -> CleanupReport {
        let Some(handle) = self.sessions.lock().unwrap().remove(id) else {
            return CleanupReport::default();
        };
        let in_flight = {
            let mut session = handle.lock().unwrap();
            session.closed = true;
            session.plan = None;
            session.synth = None;
            session.in_flight.clone()
        };
        if !in_flight.wait_idle(WRITER_WAIT) {
            warn!(session = %id, "synthesis still running at close; late output is removed when it lands");
        }
        let mut session = handle.lock().unwrap();
        let report = cleanup_session(&mut session.registry);
        if !report.failed.is_empty() {
            warn!(session = %id, failed = report.failed.len(), "cleanup left objects behind");
        }
        info!(session = %id, deleted = report.deleted_count(), "session closed");
        report
    }

    /// Closes every session idle for longer than the TTL.
    pub fn sweep_expired(&self) -> Vec<(String, CleanupReport)> {
        let now = self.now();
        let expired: Vec<String> = self
            .sessions
            .lock()
            .unwrap()
            .iter()
            .filter(|(_, h)| now.saturating_duration_since(h.lock().unwrap().last_active) > self.ttl)
            .map(|(id, _)| id.clone())
            .collect();
        expired
            .into_iter()
            .map(|id| {
                info!(session = %id, "session expired");
                let report = self.close(&id);
                (id, report)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayedEvent {
    #[default]
    Start,
    End,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlayedError {
    UnknownSegment(usize),
    NotReady(usize),
    Failed(usize),
    Skipped { expected: usize },
    Plan(PlanError),
}

/// Result of applying one client playback report. Requests must be
/// dispatched even when `error` is set, since earlier steps may have
/// advanced the plan.
#[derive(Debug, Default)]
pub struct PlayedOutcome {
    pub requested: Vec<usize>,
    pub log: Vec<(EventKind, usize)>,
    pub error: Option<PlayedError>,
}

/// Applies "segment `seq` started/ended playing" to the plan. Reporting the
/// start of `seq` implicitly ends the segment before it and steps over
/// failed segments in between. Repeated reports are no-ops.
pub fn apply_played(plan: &mut PlaybackPlan, seq: usize, event: PlayedEvent) -> PlayedOutcome {
    let mut out = PlayedOutcome::default();
    if seq >= plan.len() {
        out.error = Some(PlayedError::UnknownSegment(seq));
        return out;
    }
    let result = match event {
        PlayedEvent::Start => played_start(plan, seq, &mut out),
        PlayedEvent::End => played_end(plan, seq, &mut out),
    };
    if let Err(e) = result {
        out.error = Some(e);
    }
    out
}

fn played_start(plan: &mut PlaybackPlan, seq: usize, out: &mut PlayedOutcome) -> Result<(), PlayedError> {
    if plan.playing_index == Some(seq) || seq < plan.cursor() {
        return Ok(());
    }
    while plan.cursor() < seq {
        match plan.next_step() {
            NextStep::Busy(p) => {
                out.requested.extend(plan.finish_playing(p).map_err(PlayedError::Plan)?);
                out.log.push((EventKind::PlayEnd, p));
            }
            NextStep::Skip(f) => {
                out.requested.extend(plan.skip_failed(f).map_err(PlayedError::Plan)?);
                out.log.push((EventKind::FailedSkip, f));
            }
            NextStep::Play(s) | NextStep::Wait(s) => return Err(PlayedError::Skipped { expected: s }),
            NextStep::Finished => return Err(PlayedError::UnknownSegment(seq)),
        }
    }
    match plan.next_step() {
        NextStep::Play(s) => {
            out.requested.extend(plan.start_playing(s).map_err(PlayedError::Plan)?);
            out.log.push((EventKind::PlayStart, s));
            Ok(())
        }
        NextStep::Skip(s) => Err(PlayedError::Failed(s)),
        NextStep::Wait(s) => Err(PlayedError::NotReady(s)),
        NextStep::Busy(_) | NextStep::Finished => Ok(()),
    }
}

fn played_end(plan: &mut PlaybackPlan, seq: usize, out: &mut PlayedOutcome) -> Result<(), PlayedError> {
    if plan.playing_index == Some(seq) {
        out.requested.extend(plan.finish_playing(seq).map_err(PlayedError::Plan)?);
        out.log.push((EventKind::PlayEnd, seq));
        return Ok(());
    }
    if seq < plan.cursor() {
        return Ok(());
    }
    Err(PlayedError::Skipped { expected: plan.cursor() })
}
