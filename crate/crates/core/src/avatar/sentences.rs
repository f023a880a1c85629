/// Segments shorter than this are merged with their neighbours where possible.
pub const MIN_SEGMENT_CHARS: usize = 40;

// Lowercased tokens that end in '.' without ending a sentence.
const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "dr.", "mr.", "mrs.", "ms.", "prof.", "fig.", "figs.", "eq.", "eqs.", "vs.", "cf.", "approx.",
    "al.", "ref.", "sec.", "ch.",
];

/// Splits an answer into sentence-grouped segments for synthesis.
///
/// Whitespace is collapsed first, so joining the result with single spaces
/// gives back the whitespace-normalized answer.
pub fn split_sentences(answer: &str) -> Vec<String> {
    let normalized = answer.split_whitespace().collect::<Vec<_>>().join(" ");
    merge_short(sentences(&normalized))
}

fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let words: Vec<(usize, &str)> = text
        .split(' ')
        .scan(0usize, |pos, w| {
            let at = *pos;
            *pos += w.len() + 1;
            Some((at, w))
        })
        .collect();
    for (i, &(at, word)) in words.iter().enumerate() {
        let last = i + 1 == words.len();
        if !last && ends_sentence(word) {
            out.push(&text[start..at + word.len()]);
            start = at + word.len() + 1;
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

fn ends_sentence(word: &str) -> bool {
    let core = word.trim_end_matches(['"', '\'', ')', ']', '”', '’']);
    if !core.ends_with(['.', '!', '?']) {
        return false;
    }
    if core.ends_with('.') {
        let lower = core.to_lowercase();
        let bare = lower.trim_start_matches(['"', '\'', '(', '[', '“', '‘']);
        if ABBREVIATIONS.contains(&bare) {
            return false;
        }
    }
    true
}

fn merge_short(sentences: Vec<&str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut current = String::new();
    for s in sentences {
        if !current.is_empty() {
            current.push(' ');
        }
        current.push_str(s);
        if current.chars().count() >= MIN_SEGMENT_CHARS {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        match out.last_mut() {
            Some(prev) => {
                prev.push(' ');
                prev.push_str(&current);
            }
            None => out.push(current),
        }
    }
    out
}
