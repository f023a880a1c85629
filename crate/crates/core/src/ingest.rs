//! SRT parsing and greedy merging of subtitle cues into lecture segments.
//!
//! Subtitle files carry many short cues of a few seconds each. Retrieval works
//! better on longer units, so consecutive cues are merged left to right until
//! the next cue would push the segment past `max_span` seconds.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

/// Default cap on merged segment length, in seconds.
pub const DEFAULT_MAX_SPAN: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid timestamp {input:?} at byte {offset}: {reason}")]
pub struct TimestampError {
    pub input: String,
    pub offset: usize,
    pub reason: &'static str,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("document is not valid UTF-8: {0}")]
    Encoding(#[from] std::str::Utf8Error),
    #[error("cue {cue}: {source}")]
    Timecode {
        cue: u32,
        #[source]
        source: TimestampError,
    },
    #[error("cue {cue}: malformed timecode line {line:?}")]
    TimecodeLine { cue: u32, line: String },
    #[error("document contains no parsable cues")]
    EmptyDocument,
    #[error("invalid lecture id {0:?}: use ASCII letters, digits, '-' or '_'")]
    LectureId(String),
    #[error("max_span must be a positive number of seconds, got {0}")]
    MaxSpan(f64),
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<IngestError>,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One SRT cue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtitleEntry {
    pub index: u32,
    pub start: f64,
    pub end: f64,
    pub text: String,
}

/// A merged, timestamped transcript unit. This is what gets embedded and
/// retrieved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LectureSegment {
    pub segment_id: String,
    pub lecture_id: String,
    pub start: f64,
    pub end: f64,
    pub text: String,
}

impl LectureSegment {
    pub fn span(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub max_span: f64,
}

impl SegmentationConfig {
    pub fn new(max_span: f64) -> Result<Self, IngestError> {
        if max_span.is_finite() && max_span > 0.0 {
            Ok(Self { max_span })
        } else {
            Err(IngestError::MaxSpan(max_span))
        }
    }
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            max_span: DEFAULT_MAX_SPAN,
        }
    }
}

/// Non-fatal oddities found while parsing a subtitle document.
#[derive(Debug, Clone, PartialEq)]
pub enum SrtWarning {
    OutOfOrderIndex { previous: u32, found: u32 },
    OverlappingCue { cue: u32 },
    NonPositiveDuration { cue: u32 },
    StrayText { after_cue: Option<u32> },
    MissingIndex { assigned: u32 },
}

impl fmt::Display for SrtWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SrtWarning::OutOfOrderIndex { previous, found } => {
                write!(f, "cue {found} follows cue {previous}; keeping file order")
            }
            SrtWarning::OverlappingCue { cue } => {
                write!(f, "cue {cue} starts before the previous cue ends")
            }
            SrtWarning::NonPositiveDuration { cue } => {
                write!(f, "cue {cue} ends at or before its start; dropped")
            }
            SrtWarning::StrayText { after_cue: Some(cue) } => {
                write!(f, "block without timecode after cue {cue}; appended to it")
            }
            SrtWarning::StrayText { after_cue: None } => {
                write!(f, "block without timecode before the first cue; skipped")
            }
            SrtWarning::MissingIndex { assigned } => {
                write!(f, "cue without number; assigned {assigned}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedSrt {
    pub entries: Vec<SubtitleEntry>,
    pub warnings: Vec<SrtWarning>,
}

/// Parses `HH:MM:SS,mmm` (or `HH:MM:SS.mmm`) into seconds.
pub fn parse_timestamp(raw: &str) -> Result<f64, TimestampError> {
    parse_millis(raw).map(|ms| ms as f64 / 1000.0)
}

fn parse_millis(raw: &str) -> Result<u64, TimestampError> {
    let err = |offset: usize, reason: &'static str| TimestampError {
        input: raw.to_string(),
        offset,
        reason,
    };
    let bytes = raw.as_bytes();
    let mut pos = 0;

    let digits = |pos: &mut usize, min: usize, max: usize| -> Result<u64, TimestampError> {
        let begin = *pos;
        let mut value = 0u64;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() && *pos - begin < max {
            value = value * 10 + u64::from(bytes[*pos] - b'0');
            *pos += 1;
        }
        if *pos - begin < min {
            return Err(err(*pos, "expected digit"));
        }
        Ok(value)
    };
    let expect = |pos: &mut usize, accepted: &[u8], reason: &'static str| {
        if *pos < bytes.len() && accepted.contains(&bytes[*pos]) {
            *pos += 1;
            Ok(())
        } else {
            Err(err(*pos, reason))
        }
    };

    let hours = digits(&mut pos, 1, 3)?;
    expect(&mut pos, b":", "expected ':' after hours")?;
    let minutes_at = pos;
    let minutes = digits(&mut pos, 2, 2)?;
    if minutes >= 60 {
        return Err(err(minutes_at, "minutes out of range"));
    }
    expect(&mut pos, b":", "expected ':' after minutes")?;
    let seconds_at = pos;
    let seconds = digits(&mut pos, 2, 2)?;
    if seconds >= 60 {
        return Err(err(seconds_at, "seconds out of range"));
    }
    expect(&mut pos, b",.", "expected ',' or '.' before milliseconds")?;
    let millis = digits(&mut pos, 3, 3)?;
    if pos != bytes.len() {
        return Err(err(pos, "unexpected trailing characters"));
    }
    Ok(((hours * 60 + minutes) * 60 + seconds) * 1000 + millis)
}

/// Formats seconds as `HH:MM:SS,mmm`, rounding to the nearest millisecond.
pub fn format_timestamp(seconds: f64) -> String {
    let total = (seconds.max(0.0) * 1000.0).round() as u64;
    let (ms, total) = (total % 1000, total / 1000);
    let (s, total) = (total % 60, total / 60);
    let (m, h) = (total % 60, total / 60);
    format!("{h:02}:{m:02}:{s:02},{ms:03}")
}

/// Parses an SRT document, logging any warnings.
pub fn parse_srt(input: &[u8]) -> Result<Vec<SubtitleEntry>, IngestError> {
    let parsed = parse_srt_with_warnings(input)?;
    for w in &parsed.warnings {
        warn!("srt: {w}");
    }
    Ok(parsed.entries)
}

/// Parses an SRT document and returns the non-fatal warnings alongside the
/// entries instead of logging them.
pub fn parse_srt_with_warnings(input: &[u8]) -> Result<ParsedSrt, IngestError> {
    let text = std::str::from_utf8(input)?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);

    let mut out = ParsedSrt::default();
    let mut last_index: Option<u32> = None;
    let mut last_end = f64::NEG_INFINITY;

    for block in blocks(text) {
        let mut lines = block.iter().map(|l| l.trim());
        let Some(first) = lines.next() else { continue };

        let (index, timing) = if first.contains("-->") {
            let assigned = last_index.map_or(1, |i| i + 1);
            out.warnings.push(SrtWarning::MissingIndex { assigned });
            (assigned, Some(first))
        } else if let Ok(index) = first.parse::<u32>() {
            (index, lines.next())
        } else {
            (0, None)
        };

        let Some(timing) = timing.filter(|l| l.contains("-->")) else {
            // No timecode: a blank line inside cue text, most likely.
            let stray = clean_text(block.iter().copied());
            match out.entries.last_mut() {
                Some(prev) => {
                    if !stray.is_empty() {
                        prev.text.push(' ');
                        prev.text.push_str(&stray);
                    }
                    out.warnings.push(SrtWarning::StrayText {
                        after_cue: Some(prev.index),
                    });
                }
                None => out.warnings.push(SrtWarning::StrayText { after_cue: None }),
            }
            continue;
        };

        let (start, end) = parse_timing_line(index, timing)?;
        if let Some(prev) = last_index {
            if index <= prev {
                out.warnings.push(SrtWarning::OutOfOrderIndex {
                    previous: prev,
                    found: index,
                });
            }
        }
        last_index = Some(index);

        let body = clean_text(lines);
        if body.is_empty() {
            continue;
        }
        if end <= start {
            out.warnings
                .push(SrtWarning::NonPositiveDuration { cue: index });
            continue;
        }
        if start < last_end {
            out.warnings.push(SrtWarning::OverlappingCue { cue: index });
        }
        last_end = last_end.max(end);
        out.entries.push(SubtitleEntry {
            index,
            start,
            end,
            text: body,
        });
    }

    if out.entries.is_empty() {
        return Err(IngestError::EmptyDocument);
    }
    Ok(out)
}

fn blocks(text: &str) -> Vec<Vec<&str>> {
    let mut blocks = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        blocks.push(current);
    }
    blocks
}

fn parse_timing_line(cue: u32, line: &str) -> Result<(f64, f64), IngestError> {
    let malformed = || IngestError::TimecodeLine {
        cue,
        line: line.to_string(),
    };
    let (left, right) = line.split_once("-->").ok_or_else(malformed)?;
    // Anything after the end time (position hints and the like) is ignored.
    let right = right.split_whitespace().next().ok_or_else(malformed)?;
    let start = parse_timestamp(left.trim()).map_err(|source| IngestError::Timecode { cue, source })?;
    let end = parse_timestamp(right).map_err(|source| IngestError::Timecode { cue, source })?;
    Ok((start, end))
}

fn clean_text<'a>(lines: impl Iterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for line in lines {
        for word in strip_markup(line).split_whitespace() {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(word);
        }
    }
    out
}

/// Removes simple angle-bracket tags such as `<i>`, `</b>` or
/// `<font color="red">`. A `<` that does not open a tag is kept.
fn strip_markup(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut rest = line;
    while let Some(open) = rest.find('<') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        match tail.find('>') {
            Some(close) if is_tag(&tail[1..close]) => rest = &tail[close + 1..],
            _ => {
                out.push('<');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn is_tag(inner: &str) -> bool {
    let name = inner.strip_prefix('/').unwrap_or(inner);
    name.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && name
            .split_whitespace()
            .next()
            .is_some_and(|n| n.chars().all(|c| c.is_ascii_alphanumeric()))
}

fn to_millis(seconds: f64) -> i64 {
    (seconds * 1000.0).round() as i64
}

/// Greedily merges consecutive cues into segments of at most `max_span`
/// seconds, measured from the segment start to the candidate cue's end.
/// A cue that alone exceeds `max_span` becomes its own segment.
///
/// Entries are expected sorted by start; they are consumed in the given order.
pub fn merge_entries(
    lecture_id: &str,
    entries: &[SubtitleEntry],
    cfg: &SegmentationConfig,
) -> Vec<LectureSegment> {
    let cap = to_millis(cfg.max_span);
    let mut segments: Vec<LectureSegment> = Vec::new();
    let mut open: Option<(f64, f64, String)> = None;

    let close = |seg: (f64, f64, String), out: &mut Vec<LectureSegment>| {
        let ordinal = out.len();
        out.push(LectureSegment {
            segment_id: segment_id(lecture_id, ordinal),
            lecture_id: lecture_id.to_string(),
            start: seg.0,
            end: seg.1,
            text: seg.2,
        });
    };

    for entry in entries {
        open = match open.take() {
            None => Some((entry.start, entry.end, entry.text.clone())),
            Some((start, end, mut text)) => {
                let candidate_end = end.max(entry.end);
                if to_millis(candidate_end - start) <= cap {
                    text.push(' ');
                    text.push_str(&entry.text);
                    Some((start, candidate_end, text))
                } else {
                    close((start, end, text), &mut segments);
                    Some((entry.start, entry.end, entry.text.clone()))
                }
            }
        };
    }
    if let Some(seg) = open {
        close(seg, &mut segments);
    }
    segments
}

pub fn segment_id(lecture_id: &str, ordinal: usize) -> String {
    format!("{lecture_id}-{ordinal:04}")
}

pub fn validate_lecture_id(lecture_id: &str) -> Result<(), IngestError> {
    let ok = !lecture_id.is_empty()
        && lecture_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(IngestError::LectureId(lecture_id.to_string()))
    }
}

/// Reads, parses and merges one lecture's subtitle file.
pub fn ingest_lecture(
    srt_path: impl AsRef<Path>,
    lecture_id: &str,
    cfg: &SegmentationConfig,
) -> Result<Vec<LectureSegment>, IngestError> {
    let path = srt_path.as_ref();
    validate_lecture_id(lecture_id)?;
    let bytes = fs::read(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut entries = parse_srt(&bytes).map_err(|e| IngestError::File {
        path: path.to_path_buf(),
        source: Box::new(e),
    })?;
    if entries.windows(2).any(|w| w[1].start < w[0].start) {
        warn!(
            "{}: cues are not sorted by start time; sorting before merge",
            path.display()
        );
        entries.sort_by(|a, b| a.start.total_cmp(&b.start));
    }
    Ok(merge_entries(lecture_id, &entries, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cue(index: u32, start: f64, end: f64, text: &str) -> SubtitleEntry {
        SubtitleEntry {
            index,
            start,
            end,
            text: text.into(),
        }
    }

    #[test]
    fn timestamps() {
        assert_eq!(parse_timestamp("00:00:00,000").unwrap(), 0.0);
        assert_eq!(parse_timestamp("00:01:02,500").unwrap(), 62.5);
        assert_eq!(parse_timestamp("01:00:00,001").unwrap(), 3600.001);
        assert_eq!(parse_timestamp("00:01:02.500").unwrap(), 62.5);
    }

    #[test]
    fn timestamp_errors_carry_offset() {
        let e = parse_timestamp("00:61:00,000").unwrap_err();
        assert_eq!(e.offset, 3);
        let e = parse_timestamp("00:01:02;500").unwrap_err();
        assert_eq!(e.offset, 8);
        let e = parse_timestamp("00:01:02,5").unwrap_err();
        assert_eq!(e.offset, 10);
        let e = parse_timestamp("00:01:02,500 ").unwrap_err();
        assert_eq!(e.offset, 12);
        assert!(parse_timestamp("").is_err());
    }

    #[test]
    fn format_pads_fields() {
        assert_eq!(format_timestamp(3600.001), "01:00:00,001");
        assert_eq!(format_timestamp(62.5), "00:01:02,500");
    }

    #[test]
    fn minimal_document() {
        let got = parse_srt(b"1\n00:00:00,000 --> 00:00:05,000\nHello world\n").unwrap();
        assert_eq!(got, vec![cue(1, 0.0, 5.0, "Hello world")]);
    }

    #[test]
    fn multi_line_text_is_joined() {
        let got = parse_srt(b"1\r\n00:00:00,000 --> 00:00:02,000\r\nX-ray\r\nbasics\r\n").unwrap();
        assert_eq!(got[0].text, "X-ray basics");
    }

    #[test]
    fn bom_markup_and_empty_cues() {
        let doc = "\u{feff}1\n00:00:00,000 --> 00:00:01,000\n<i>Hello</i> <b>there</b>\n\n\
                   2\n00:00:01,000 --> 00:00:02,000\n<i></i>\n\n\
                   3\n00:00:02,000 --> 00:00:03,000 X1:10 X2:20\na < b\n";
        let got = parse_srt(doc.as_bytes()).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].text, "Hello there");
        assert_eq!(got[1].text, "a < b");
        assert_eq!(got[1].index, 3);
    }

    #[test]
    fn out_of_order_cues_keep_file_order() {
        let doc = "2\n00:00:05,000 --> 00:00:06,000\nsecond\n\n\
                   1\n00:00:06,000 --> 00:00:07,000\nfirst\n";
        let parsed = parse_srt_with_warnings(doc.as_bytes()).unwrap();
        let order: Vec<u32> = parsed.entries.iter().map(|e| e.index).collect();
        assert_eq!(order, vec![2, 1]);
        assert!(parsed
            .warnings
            .contains(&SrtWarning::OutOfOrderIndex { previous: 2, found: 1 }));
    }

    #[test]
    fn bad_timecode_names_cue() {
        let doc = "1\n00:00:00,000 --> 00:00:01,000\nok\n\n7\n00:00:0x,000 --> 00:00:02,000\nbad\n";
        match parse_srt(doc.as_bytes()) {
            Err(IngestError::Timecode { cue, .. }) => assert_eq!(cue, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_document() {
        assert!(matches!(parse_srt(b""), Err(IngestError::EmptyDocument)));
        assert!(matches!(
            parse_srt(b"\n\n  \n"),
            Err(IngestError::EmptyDocument)
        ));
    }

    #[test]
    fn greedy_merge_trace() {
        let entries = [cue(1, 0.0, 8.0, "t1"), cue(2, 8.0, 15.0, "t2"), cue(3, 15.0, 25.0, "t3")];
        let got = merge_entries("lec01", &entries, &SegmentationConfig::default());
        let spans: Vec<_> = got.iter().map(|s| (s.start, s.end, s.text.as_str())).collect();
        assert_eq!(spans, vec![(0.0, 15.0, "t1 t2"), (15.0, 25.0, "t3")]);
        assert_eq!(got[0].segment_id, "lec01-0000");
        assert_eq!(got[1].segment_id, "lec01-0001");
    }

    #[test]
    fn oversize_cue_stands_alone() {
        let got = merge_entries("l", &[cue(1, 0.0, 30.0, "long")], &SegmentationConfig::default());
        assert_eq!(got.len(), 1);
        assert_eq!((got[0].start, got[0].end), (0.0, 30.0));
    }

    #[test]
    fn five_second_cues_group_by_four() {
        let entries: Vec<_> = (0..12)
            .map(|i| cue(i + 1, 5.0 * i as f64, 5.0 * (i + 1) as f64, &format!("c{i}")))
            .collect();
        // Brute force: a segment starting at cue a can take cue b iff end(b) - start(a) <= 20.
        let mut expected = Vec::new();
        let mut a = 0;
        while a < entries.len() {
            let mut b = a;
            while b + 1 < entries.len() && entries[b + 1].end - entries[a].start <= 20.0 {
                b += 1;
            }
            expected.push(b - a + 1);
            a = b + 1;
        }
        assert_eq!(expected, vec![4, 4, 4]);
        let got = merge_entries("l", &entries, &SegmentationConfig::default());
        let sizes: Vec<usize> = got.iter().map(|s| s.text.split(' ').count()).collect();
        assert_eq!(sizes, expected);
    }

    #[test]
    fn merge_of_nothing_is_nothing() {
        assert!(merge_entries("l", &[], &SegmentationConfig::default()).is_empty());
    }

    #[test]
    fn config_rejects_non_positive_span() {
        assert!(SegmentationConfig::new(0.0).is_err());
        assert!(SegmentationConfig::new(f64::NAN).is_err());
        assert!(SegmentationConfig::new(20.0).is_ok());
    }

    #[test]
    fn lecture_id_slug() {
        assert!(validate_lecture_id("lec01").is_ok());
        assert!(validate_lecture_id("").is_err());
        assert!(validate_lecture_id("a/b").is_err());
    }
}
