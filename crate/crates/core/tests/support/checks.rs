//! Library-facing checks shared by the property suites and the acceptance
//! target. Expected values always come from the oracles in the parent module.

use lectern_core::avatar::plan::plan_playback;
use lectern_core::avatar::schedule::{run_schedule, EventKind, ScheduleOutcome, SimClock};
use lectern_core::avatar::synth::StubSynth;
use lectern_core::ingest::{merge_entries, parse_srt, SegmentationConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TraceSpec;

fn joined<'a>(texts: impl Iterator<Item = &'a str>) -> String {
    texts.collect::<Vec<_>>().join(" ")
}

/// Checks every merge invariant for one document; returns the first violation.
pub fn check_document(seed: u64, max_cues: usize, max_span: f64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (doc, cues) = super::random_srt(&mut rng, max_cues);
    let entries = parse_srt(doc.as_bytes()).map_err(|e| e.to_string())?;
    if entries.len() != cues.len() {
        return Err(format!("parsed {} of {} cues", entries.len(), cues.len()));
    }
    for (entry, (s, e, text)) in entries.iter().zip(&cues) {
        if (entry.start * 1000.0).round() as u64 != *s || (entry.end * 1000.0).round() as u64 != *e {
            return Err(format!("cue {} times drifted", entry.index));
        }
        if &entry.text != text {
            return Err(format!("cue {} text {:?} != {:?}", entry.index, entry.text, text));
        }
    }

    let cfg = SegmentationConfig::new(max_span).unwrap();
    let segments = merge_entries("lec", &entries, &cfg);
    if merge_entries("lec", &entries, &cfg) != segments {
        return Err("merge is not deterministic".into());
    }

    // Text preservation and order.
    if joined(segments.iter().map(|s| s.text.as_str())) != joined(entries.iter().map(|e| e.text.as_str())) {
        return Err("concatenated text differs".into());
    }

    // Segments partition the cue list into contiguous runs whose hull is the segment range.
    let mut next = 0;
    for seg in &segments {
        let words = seg.text.split(' ').count();
        let mut taken = 0;
        let first = next;
        while taken < words {
            taken += entries[next].text.split(' ').count();
            next += 1;
        }
        let run = &entries[first..next];
        let hull_start = run.iter().map(|e| e.start).fold(f64::INFINITY, f64::min);
        let hull_end = run.iter().map(|e| e.end).fold(f64::NEG_INFINITY, f64::max);
        if seg.start != hull_start || seg.end != hull_end {
            return Err(format!("{} range is not the hull of its cues", seg.segment_id));
        }
        let span_ms = ((seg.end - seg.start) * 1000.0).round() as i64;
        if run.len() > 1 && span_ms > (max_span * 1000.0).round() as i64 {
            return Err(format!("{} spans {} ms", seg.segment_id, span_ms));
        }
    }
    if next != entries.len() {
        return Err("cues left over after the last segment".into());
    }
    if segments.windows(2).any(|w| w[1].start < w[0].start) {
        return Err("segments out of order".into());
    }
    Ok(())
}

pub fn simulate(case: &TraceSpec) -> ScheduleOutcome {
    let texts: Vec<String> = (0..case.len()).map(|i| format!("segment {i}")).collect();
    let mut plan = plan_playback(&texts, case.lookahead, case.preload).unwrap();
    let synth = StubSynth::new()
        .with_latencies(case.latency.iter().copied())
        .with_durations(case.duration.iter().copied())
        .failing(case.fail.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i));
    let out = run_schedule(&mut plan, &synth, &mut SimClock::new()).unwrap();
    assert!(plan.is_finished());
    out
}

pub fn times(out: &ScheduleOutcome, kind: EventKind, n: usize) -> Vec<Option<f64>> {
    let mut v = vec![None; n];
    for e in out.of_kind(kind) {
        assert!(v[e.seq].is_none(), "{kind:?} logged twice for {}", e.seq);
        v[e.seq] = Some(e.time);
    }
    v
}

/// Every scheduler contract for one trace; returns the first violation.
pub fn check_trace(case: &TraceSpec) -> Result<(), String> {
    let n = case.len();
    let out = simulate(case);
    let oracle = super::playback_oracle(case);

    let (req, start) = super::playback_recurrence(case);
    if req != oracle.request || start != oracle.play_start {
        return Err("oracle and recurrence disagree".into());
    }
    if out.max_in_flight > case.lookahead || oracle.max_in_flight > case.lookahead {
        return Err(format!("in-flight {} exceeds lookahead", out.max_in_flight));
    }
    let order = out.play_order();
    let expected: Vec<usize> = (0..n).filter(|&i| !case.fail[i]).collect();
    if order != expected {
        return Err(format!("play order {order:?}, expected {expected:?}"));
    }
    for (kind, want, name) in [
        (EventKind::RequestSynth, &oracle.request, "request"),
        (EventKind::PlayStart, &oracle.play_start, "play_start"),
        (EventKind::PlayEnd, &oracle.play_end, "play_end"),
        (EventKind::FailedSkip, &oracle.skip, "failed_skip"),
    ] {
        let got = times(&out, kind, n);
        if &got != want {
            return Err(format!("{name} times {got:?}, oracle {want:?}"));
        }
    }
    if out.stalls() != oracle.stalls {
        return Err(format!("stalls {:?}, oracle {:?}", out.stalls(), oracle.stalls));
    }
    if !case.fail[0] && out.first_play_start() != Some(case.latency[0]) {
        return Err("first play_start is not segment 0's synthesis completion".into());
    }
    Ok(())
}
