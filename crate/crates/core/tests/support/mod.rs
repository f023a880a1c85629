//! Independent reference implementations used by the integration and
//! acceptance suites. Nothing here calls into the code paths it checks.

#![allow(dead_code)]

pub mod checks;

use rand::{Rng, RngCore};

/// Full scan: plain sequential f64 dot product per row, rounded to f32,
/// then a complete sort by (score desc, id asc).
pub fn brute_force_top_k(data: &[f32], dim: usize, ids: &[String], query: &[f32], k: usize) -> Vec<(String, f32)> {
    let mut all: Vec<(String, f32)> = ids
        .iter()
        .enumerate()
        .map(|(row, id)| {
            let mut acc = 0f64;
            for j in 0..dim {
                acc += data[row * dim + j] as f64 * query[j] as f64;
            }
            (id.clone(), acc as f32)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub id: String,
    pub semantic: f64,
    pub start: f64,
    pub end: f64,
}

/// Evaluates the temporal formula for every candidate and orders them by
/// repeated selection of the best remaining one.
pub fn rescore_oracle(cands: &[Candidate], t: f64, lambda: f64) -> Vec<(String, f64)> {
    let mut pool: Vec<(String, f64, f64)> = cands
        .iter()
        .map(|c| {
            let mid = (c.start + c.end) / 2.0;
            let adjusted = c.semantic - lambda * ((mid - t).abs() / 60.0);
            (c.id.clone(), c.semantic, adjusted)
        })
        .collect();
    let better = |a: &(String, f64, f64), b: &(String, f64, f64)| -> bool {
        if a.2 != b.2 {
            return a.2 > b.2;
        }
        if a.1 != b.1 {
            return a.1 > b.1;
        }
        a.0 < b.0
    };
    let mut out = Vec::new();
    while !pool.is_empty() {
        let mut best = 0;
        for i in 1..pool.len() {
            if better(&pool[i], &pool[best]) {
                best = i;
            }
        }
        let (id, _, adj) = pool.swap_remove(best);
        out.push((id, adj));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSpec {
    pub latency: Vec<f64>,
    pub duration: Vec<f64>,
    pub fail: Vec<bool>,
    pub lookahead: usize,
    pub preload: usize,
}

impl TraceSpec {
    pub fn len(&self) -> usize {
        self.latency.len()
    }

    pub fn random(rng: &mut impl RngCore, max_segments: usize, fail_prob: f64) -> Self {
        let n = rng.random_range(1..=max_segments);
        // Quarter-second grid keeps sums exact in binary floating point.
        let q = |rng: &mut dyn RngCore, lo: f64, hi: f64| {
            let steps = ((hi - lo) * 4.0) as u32;
            lo + rng.random_range(0..=steps) as f64 / 4.0
        };
        Self {
            latency: (0..n).map(|_| q(rng, 0.5, 8.0)).collect(),
            duration: (0..n).map(|_| q(rng, 1.0, 6.0)).collect(),
            fail: (0..n).map(|_| rng.random_bool(fail_prob)).collect(),
            lookahead: 2,
            preload: 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleTrace {
    pub request: Vec<Option<f64>>,
    pub play_start: Vec<Option<f64>>,
    pub play_end: Vec<Option<f64>>,
    pub skip: Vec<Option<f64>>,
    pub stalls: Vec<(f64, f64)>,
    /// Max synthesizing-past-cursor count sampled after every event.
    pub max_in_flight: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum OracleEvent {
    SynthDone(usize),
    PlayEnd(usize),
}

/// Event-queue simulation of sequential playback with the preload window:
/// preload the first segments, request `i + lookahead` when `i` starts,
/// request a segment when playback reaches it if nobody has yet.
pub fn playback_oracle(case: &TraceSpec) -> OracleTrace {
    let n = case.len();
    let preload = case.preload.max(1).min(case.lookahead + 1).min(n);
    let mut tr = OracleTrace {
        request: vec![None; n],
        play_start: vec![None; n],
        play_end: vec![None; n],
        skip: vec![None; n],
        ..Default::default()
    };
    let mut finished_synth = vec![None::<f64>; n];
    let mut pending: Vec<(f64, OracleEvent)> = Vec::new();
    let mut cursor = 0usize;
    let mut playing: Option<usize> = None;
    let mut last_end: Option<f64> = None;

    fn ask(i: usize, now: f64, case: &TraceSpec, tr: &mut OracleTrace, pending: &mut Vec<(f64, OracleEvent)>) {
        if i < case.len() && tr.request[i].is_none() {
            tr.request[i] = Some(now);
            pending.push((now + case.latency[i], OracleEvent::SynthDone(i)));
        }
    }

    for i in 0..preload {
        ask(i, 0.0, case, &mut tr, &mut pending);
    }
    let mut now = 0.0;
    loop {
        // Start or skip whatever is due.
        while playing.is_none() && cursor < n {
            let Some(done) = finished_synth[cursor] else { break };
            let _ = done;
            if case.fail[cursor] {
                tr.skip[cursor] = Some(now);
                cursor += 1;
                ask(cursor, now, case, &mut tr, &mut pending);
            } else {
                tr.play_start[cursor] = Some(now);
                if let Some(e) = last_end.take() {
                    if now > e {
                        tr.stalls.push((e, now));
                    }
                }
                playing = Some(cursor);
                pending.push((now + case.duration[cursor], OracleEvent::PlayEnd(cursor)));
                for j in cursor + 1..=cursor + case.lookahead {
                    ask(j, now, case, &mut tr, &mut pending);
                }
            }
        }
        let anchor = playing.unwrap_or(cursor);
        let in_flight = (0..n)
            .filter(|&j| j > anchor && tr.request[j].is_some() && finished_synth[j].is_none())
            .count();
        tr.max_in_flight = tr.max_in_flight.max(in_flight);

        if cursor >= n {
            break;
        }
        // Earliest pending event; synthesis completions before play ends at equal times.
        let Some(pos) = (0..pending.len()).min_by(|&a, &b| {
            let ka = (pending[a].0, matches!(pending[a].1, OracleEvent::PlayEnd(_)));
            let kb = (pending[b].0, matches!(pending[b].1, OracleEvent::PlayEnd(_)));
            ka.partial_cmp(&kb).unwrap()
        }) else {
            break;
        };
        let (time, ev) = pending.remove(pos);
        now = time;
        match ev {
            OracleEvent::SynthDone(i) => finished_synth[i] = Some(time),
            OracleEvent::PlayEnd(i) => {
                tr.play_end[i] = Some(time);
                last_end = Some(time);
                playing = None;
                cursor = i + 1;
                ask(cursor, now, case, &mut tr, &mut pending);
            }
        }
    }
    tr
}

/// Closed-form forward pass over the same rules, used to cross-check the
/// event-queue oracle itself.
pub fn playback_recurrence(case: &TraceSpec) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let n = case.len();
    let preload = case.preload.max(1).min(case.lookahead + 1).min(n);
    let mut request = vec![None; n];
    let mut start = vec![None; n];
    for r in request.iter_mut().take(preload) {
        *r = Some(0.0);
    }
    let mut arrive = 0.0f64;
    for i in 0..n {
        let req = *request[i].get_or_insert(arrive);
        let done = req + case.latency[i];
        let begin = arrive.max(done);
        if case.fail[i] {
            arrive = begin;
            continue;
        }
        start[i] = Some(begin);
        for slot in request.iter_mut().take((i + case.lookahead + 1).min(n)).skip(i + 1) {
            slot.get_or_insert(begin);
        }
        arrive = begin + case.duration[i];
    }
    (request, start)
}

pub fn random_words(rng: &mut impl RngCore, min: usize, max: usize) -> String {
    const WORDS: &[&str] = &[
        "x-ray", "projection", "detector", "filter", "ramp", "sinogram", "voxel", "contrast", "dose", "gantry",
        "spin", "echo", "gradient", "field", "signal", "noise", "kernel", "fourier", "slice", "tissue",
    ];
    let n = rng.random_range(min..=max);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

pub fn fmt_srt_time(ms: u64) -> String {
    format!(
        "{:02}:{:02}:{:02},{:03}",
        ms / 3_600_000,
        ms / 60_000 % 60,
        ms / 1000 % 60,
        ms % 1000
    )
}

/// A random but well-formed SRT document: (document, [(start_ms, end_ms, text)]).
pub fn random_srt(rng: &mut impl RngCore, max_cues: usize) -> (String, Vec<(u64, u64, String)>) {
    let n = rng.random_range(1..=max_cues);
    let mut t = rng.random_range(0..5_000u64);
    let mut doc = String::new();
    let mut cues = Vec::new();
    for i in 0..n {
        let len = rng.random_range(200..=9_000u64);
        // Occasionally an oversize cue.
        let len = if rng.random_bool(0.02) { len + 25_000 } else { len };
        let (s, e) = (t, t + len);
        let text = random_words(rng, 1, 8);
        let crlf = rng.random_bool(0.3);
        let nl = if crlf { "\r\n" } else { "\n" };
        let lines: Vec<&str> = text.splitn(2, ' ').collect();
        doc.push_str(&format!("{}{nl}{} --> {}{nl}{}{nl}{nl}", i + 1, fmt_srt_time(s), fmt_srt_time(e), lines.join(nl)));
        cues.push((s, e, text));
        t = e + rng.random_range(0..2_000u64);
    }
    (doc, cues)
}

/// Store of `n` segments with random unit vectors spread over `lectures`
/// lectures. Segment ids are unique; timestamps are random.
pub fn random_store(rng: &mut impl RngCore, n: usize, dim: usize, lectures: usize) -> lectern_core::RagStore {
    use lectern_core::{Embedding, LectureSegment, StoreMetadata, VectorIndex};

    let mut index = VectorIndex::new(dim);
    let mut segments = Vec::with_capacity(n);
    let mut lecture_ids: Vec<String> = Vec::new();
    for i in 0..n {
        let lecture = format!("l{}", i % lectures.max(1));
        if !lecture_ids.contains(&lecture) {
            lecture_ids.push(lecture.clone());
        }
        let start = rng.random_range(0.0..7200.0f64);
        let seg = LectureSegment {
            segment_id: format!("{lecture}-{i:05}"),
            lecture_id: lecture,
            start,
            end: start + rng.random_range(0.5..20.0f64),
            text: random_words(rng, 2, 12),
        };
        let v = Embedding::normalized((0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect());
        index.push(seg.segment_id.clone(), &v).unwrap();
        segments.push(seg);
    }
    let metadata = StoreMetadata {
        embedder_name: "random".into(),
        dimension: dim,
        max_span: 20.0,
        // Unix epoch, so fixtures are reproducible.
        created_at: Default::default(),
        lecture_ids,
        format_version: lectern_core::store::FORMAT_VERSION,
    };
    lectern_core::RagStore::new(index, segments, metadata).unwrap()
}

pub fn random_unit(rng: &mut impl RngCore, dim: usize) -> lectern_core::Embedding {
    lectern_core::Embedding::normalized((0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
}

/// Semantic top-K by full scan, optionally restricted to one lecture, then
/// exhaustive rescoring and truncation to k.
pub fn two_stage_oracle(
    store: &lectern_core::RagStore,
    query: &[f32],
    lecture: Option<&str>,
    t: f64,
    lambda: f64,
    top_candidates: usize,
    top_evidence: usize,
) -> Vec<(String, f64)> {
    let dim = store.index().dimension();
    let rows: Vec<usize> = (0..store.len())
        .filter(|&r| lecture.is_none_or(|l| store.segments()[r].lecture_id == l))
        .collect();
    let data: Vec<f32> = rows.iter().flat_map(|&r| store.index().row(r).iter().copied()).collect();
    let ids: Vec<String> = rows.iter().map(|&r| store.segments()[r].segment_id.clone()).collect();
    let semantic = brute_force_top_k(&data, dim, &ids, query, top_candidates);
    let cands: Vec<Candidate> = semantic
        .into_iter()
        .map(|(id, score)| {
            let seg = store.segment(&id).unwrap();
            Candidate {
                id,
                semantic: score as f64,
                start: seg.start,
                end: seg.end,
            }
        })
        .collect();
    let mut ranked = rescore_oracle(&cands, t, lambda);
    ranked.truncate(top_evidence);
    ranked
}
