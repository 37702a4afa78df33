use std::sync::OnceLock;

use md5::{Digest, Md5};
use regex::Regex;

use crate::error::{bail_input, Result};

/// Characters whose consecutive repeats collapse to one.
pub const DEFAULT_REPEATABLE: &[char] =
    &[' ', '\t', '\n', '\r', '\u{3000}', '!', '?', '.', '。', '！', '？'];

/// Collapses each maximal run of one repeatable character to a single copy.
pub fn dedup_chars(text: &str, repeatable: &[char]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut prev = None;
    for c in text.chars() {
        if prev == Some(c) && repeatable.contains(&c) {
            continue;
        }
        out.push(c);
        prev = Some(c);
    }
    out
}

fn terminal_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(?:[。！？]+|[.!?]+)[”’"'」』)\]]*"#).expect("static pattern"))
}

/// Splits `text` into consecutive slices that concatenate back to `text`.
///
/// Rules, applied left to right:
/// 1. A run of `。！？` ends a sentence.
/// 2. A run of `.!?` ends a sentence only when followed by whitespace or the
///    end of text.
/// 3. Closing quotes and brackets right after the terminal run stay with it.
/// 4. Whitespace after a sentence end belongs to the sentence it follows.
pub fn segment_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for m in terminal_regex().find_iter(text) {
        let after = &text[m.end()..];
        let ascii = m.as_str().starts_with(['.', '!', '?']);
        if ascii && !after.is_empty() && !after.starts_with(char::is_whitespace) {
            continue;
        }
        let ws = after.len() - after.trim_start().len();
        let end = m.end() + ws;
        out.push(&text[start..end]);
        start = end;
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32, 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2FA1F)
}

/// Word-level units: maximal alphanumeric runs, with every CJK ideograph a
/// word of its own.
pub fn words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if is_cjk(c) {
            if let Some(s) = start.take() {
                out.push(&text[s..i]);
            }
            out.push(&text[i..i + c.len_utf8()]);
        } else if c.is_alphanumeric() {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            out.push(&text[s..i]);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

pub fn word_count(text: &str) -> usize {
    words(text).len()
}

/// Drops sentences with fewer than `min_words` words, then empty paragraphs.
pub fn filter_short_sentences(paragraphs: &[Vec<String>], min_words: usize) -> (Vec<Vec<String>>, usize) {
    let mut removed = 0;
    let kept = paragraphs
        .iter()
        .map(|p| {
            let keep: Vec<String> = p.iter().filter(|s| word_count(s) >= min_words).cloned().collect();
            removed += p.len() - keep.len();
            keep
        })
        .filter(|p| !p.is_empty())
        .collect();
    (kept, removed)
}

pub const MAX_DEDUP_PARAGRAPH_SENTENCES: usize = 99;

/// Collapses consecutive identical paragraphs of 1..=99 sentences, repeated
/// until nothing changes. Returns the paragraphs and the number removed.
pub fn dedup_paragraphs(paragraphs: &[Vec<String>]) -> (Vec<Vec<String>>, usize) {
    let mut cur = paragraphs.to_vec();
    let mut removed = 0;
    loop {
        let mut next: Vec<Vec<String>> = Vec::with_capacity(cur.len());
        for p in cur.iter() {
            let eligible = (1..=MAX_DEDUP_PARAGRAPH_SENTENCES).contains(&p.len());
            if eligible && next.last() == Some(p) {
                continue;
            }
            next.push(p.clone());
        }
        if next.len() == cur.len() {
            return (next, removed);
        }
        removed += cur.len() - next.len();
        cur = next;
    }
}

pub fn md5_u128(text: &str) -> u128 {
    u128::from_be_bytes(Md5::digest(text.as_bytes()).into())
}

/// Wrapping sum of the MD5 digests of the three longest sentences (length in
/// chars, earlier sentence wins ties).
pub fn doc_fingerprint<S: AsRef<str>>(sentences: &[S]) -> Result<u128> {
    if sentences.is_empty() {
        bail_input!("fingerprint of an empty document");
    }
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(sentences[i].as_ref().chars().count()));
    Ok(order.iter().take(3).fold(0u128, |acc, &i| acc.wrapping_add(md5_u128(sentences[i].as_ref()))))
}
