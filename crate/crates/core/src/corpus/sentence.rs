use serde::{Deserialize, Serialize};

/// Tokens ending in a period that never close a sentence. Matched
/// case-insensitively against the whitespace-delimited word, leading
/// brackets and quotes removed. Single uppercase initials ("J.") are also exempt.
pub const ABBREVIATIONS: &[&str] = &[
    "approx.", "assn.", "ave.", "bros.", "capt.", "cf.", "co.", "corp.", "dept.", "dr.", "e.g.", "est.", "etc.",
    "fig.", "gen.", "gov.", "i.e.", "inc.", "jr.", "lt.", "ltd.", "mr.", "mrs.", "ms.", "mt.", "no.", "nos.",
    "p.m.", "a.m.", "ph.d.", "prof.", "rd.", "rev.", "sen.", "sgt.", "sr.", "st.", "u.k.", "u.s.", "vs.",
];

/// A sentence and its location in the source, in `char` offsets, end exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '\u{201c}' | '\u{2018}')
}

fn is_abbreviation(chars: &[char], dot: usize) -> bool {
    let mut start = dot;
    while start > 0 && !chars[start - 1].is_whitespace() {
        start -= 1;
    }
    while start < dot && is_opener(chars[start]) {
        start += 1;
    }
    if dot - start == 1 && chars[start].is_uppercase() {
        return true;
    }
    let word: String = chars[start..=dot].iter().collect::<String>().to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

/// Sentence boundaries with their char spans. A boundary is terminal
/// punctuation (plus any closing quotes) followed by whitespace and then an
/// uppercase letter or digit, optionally behind an opening quote.
pub fn split_spans(text: &str) -> Vec<SentenceSpan> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut seg_start = 0;
    let mut i = 0;
    while i < chars.len() {
        if !is_terminal(chars[i]) {
            i += 1;
            continue;
        }
        let mut end = i + 1;
        while end < chars.len() && (is_terminal(chars[end]) || is_closer(chars[end])) {
            end += 1;
        }
        let mut next = end;
        while next < chars.len() && chars[next].is_whitespace() {
            next += 1;
        }
        let mut probe = next;
        while probe < chars.len() && is_opener(chars[probe]) {
            probe += 1;
        }
        let boundary = next > end
            && probe < chars.len()
            && (chars[probe].is_uppercase() || chars[probe].is_ascii_digit())
            && !(chars[i] == '.' && end == i + 1 && is_abbreviation(&chars, i));
        if boundary {
            push_trimmed(&chars, seg_start, end, &mut out);
            seg_start = next;
        }
        i = end;
    }
    push_trimmed(&chars, seg_start, chars.len(), &mut out);
    out
}

fn push_trimmed(chars: &[char], mut start: usize, mut end: usize, out: &mut Vec<SentenceSpan>) {
    while start < end && chars[start].is_whitespace() {
        start += 1;
    }
    while end > start && chars[end - 1].is_whitespace() {
        end -= 1;
    }
    if start < end {
        out.push(SentenceSpan { text: chars[start..end].iter().collect(), start, end });
    }
}

pub fn split_sentences(text: &str) -> Vec<String> {
    split_spans(text).into_iter().map(|s| s.text).collect()
}
