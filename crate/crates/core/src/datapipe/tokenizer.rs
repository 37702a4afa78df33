use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Reserved ids. Text never tokenizes to these.
pub mod special {
    pub const PAD: u32 = 0;
    pub const BOS: u32 = 1;
    pub const EOS: u32 = 2;
    pub const CLS: u32 = 3;
    pub const SEP: u32 = 4;
    pub const MASK: u32 = 5;
    pub const HD: u32 = 6;
    pub const HD_END: u32 = 7;
    pub const TL: u32 = 8;
    pub const TL_END: u32 = 9;
    pub const COUNT: u32 = 10;
    pub const NAMES: [&str; COUNT as usize] =
        ["[PAD]", "[BOS]", "[EOS]", "[CLS]", "[SEP]", "[MASK]", "[HD]", "[/HD]", "[TL]", "[/TL]"];
}

pub const BYTE_BASE: u32 = special::COUNT;
pub const LEARNED_BASE: u32 = BYTE_BASE + 256;
pub const MAX_PIECE_LEN: usize = 16;
const MAX_SUBSTRING: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RunKind {
    Word,
    Space,
    Other,
}

fn kind(b: u8) -> RunKind {
    if b.is_ascii_alphanumeric() || b >= 0x80 {
        RunKind::Word
    } else if b.is_ascii_whitespace() {
        RunKind::Space
    } else {
        RunKind::Other
    }
}

/// Byte ranges of pre-token runs: word bytes (ASCII alphanumerics and all
/// non-ASCII bytes), whitespace runs, and single other bytes. A single
/// space directly before a word joins that word's run.
pub fn runs(bytes: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let leading_space = bytes[i] == b' ' && bytes.get(i + 1).is_some_and(|&b| kind(b) == RunKind::Word);
        let k = if leading_space { RunKind::Word } else { kind(bytes[i]) };
        let mut j = i + 1;
        if k != RunKind::Other {
            while j < bytes.len() && kind(bytes[j]) == k {
                if k == RunKind::Space && bytes[j] == b' ' && bytes.get(j + 1).is_some_and(|&b| kind(b) == RunKind::Word) {
                    break;
                }
                j += 1;
            }
        }
        out.push((i, j));
        i = j;
    }
    out
}

fn is_word_run(w: &[u8]) -> bool {
    let body = w.strip_prefix(b" ").unwrap_or(w);
    body.first().is_some_and(|&b| kind(b) == RunKind::Word)
}

/// Greedy longest-match subword tokenizer with byte fallback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    /// Learned pieces; piece `k` has id `LEARNED_BASE + k`.
    pieces: Vec<Vec<u8>>,
    #[serde(skip)]
    lookup: HashMap<Vec<u8>, u32>,
}

impl Tokenizer {
    pub fn from_pieces(pieces: Vec<Vec<u8>>) -> Self {
        let lookup = pieces.iter().enumerate().map(|(k, p)| (p.clone(), LEARNED_BASE + k as u32)).collect();
        Self { pieces, lookup }
    }

    /// Byte fallback only.
    pub fn bytes_only() -> Self {
        Self::from_pieces(Vec::new())
    }

    /// Learns up to `vocab_size - LEARNED_BASE` pieces: frequent whole words
    /// (at least 2 bytes, leading space included) first, then frequent in-word substrings of 2 to 8
    /// bytes scored by `count × (len − 1)`. Ties break on byte order.
    pub fn train<S: AsRef<str>>(texts: &[S], vocab_size: usize) -> Self {
        let budget = vocab_size.saturating_sub(LEARNED_BASE as usize);
        let mut word_freq: HashMap<&[u8], u64> = HashMap::new();
        for t in texts {
            let b = t.as_ref().as_bytes();
            for (s, e) in runs(b) {
                let w = &b[s..e];
                if is_word_run(w) && w.len() >= 2 && w.len() <= MAX_PIECE_LEN {
                    *word_freq.entry(w).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&[u8], u64)> = word_freq.iter().map(|(w, c)| (*w, *c)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let word_budget = budget - budget / 4;
        let mut pieces: Vec<Vec<u8>> = ranked.iter().take(word_budget).map(|(w, _)| w.to_vec()).collect();
        let mut sub: HashMap<&[u8], u64> = HashMap::new();
        for (w, c) in &ranked {
            for len in 2..=MAX_SUBSTRING.min(w.len().saturating_sub(1)) {
                for s in 0..=w.len() - len {
                    *sub.entry(&w[s..s + len]).or_default() += c;
                }
            }
        }
        let taken: std::collections::HashSet<Vec<u8>> = pieces.iter().cloned().collect();
        let mut scored: Vec<(&[u8], u64)> = sub
            .into_iter()
            .filter(|(s, _)| !taken.contains(*s))
            .map(|(s, c)| (s, c * (s.len() as u64 - 1)))
            .collect();
        scored.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        pieces.extend(scored.into_iter().take(budget - pieces.len()).map(|(s, _)| s.to_vec()));
        Self::from_pieces(pieces)
    }

    pub fn vocab_size(&self) -> usize {
        LEARNED_BASE as usize + self.pieces.len()
    }

    pub fn pieces(&self) -> &[Vec<u8>] {
        &self.pieces
    }

    pub fn piece_id(&self, piece: &[u8]) -> Option<u32> {
        self.lookup.get(piece).copied()
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        self.tokenize_bytes(text.as_bytes())
    }

    pub fn tokenize_bytes(&self, bytes: &[u8]) -> Vec<u32> {
        self.tokenize_with_offsets(bytes).into_iter().map(|(id, _, _)| id).collect()
    }

    /// Tokens with their `[start, end)` byte range in the input.
    pub fn tokenize_with_offsets(&self, bytes: &[u8]) -> Vec<(u32, usize, usize)> {
        let mut out = Vec::new();
        for (s, e) in runs(bytes) {
            let mut i = s;
            while i < e {
                let longest = (e - i).min(MAX_PIECE_LEN);
                let hit = (2..=longest).rev().find_map(|len| self.lookup.get(&bytes[i..i + len]).map(|&id| (id, len)));
                let (id, len) = hit.unwrap_or((BYTE_BASE + bytes[i] as u32, 1));
                out.push((id, i, i + len));
                i += len;
            }
        }
        out
    }

    /// Bytes of a token; special tokens render as their bracketed names.
    pub fn token_bytes(&self, id: u32) -> &[u8] {
        static BYTES: [u8; 256] = {
            let mut b = [0u8; 256];
            let mut i = 0;
            while i < 256 {
                b[i] = i as u8;
                i += 1;
            }
            b
        };
        if id < BYTE_BASE {
            special::NAMES[id as usize].as_bytes()
        } else if id < LEARNED_BASE {
            let b = (id - BYTE_BASE) as usize;
            &BYTES[b..b + 1]
        } else {
            self.pieces.get((id - LEARNED_BASE) as usize).map_or(&[], Vec::as_slice)
        }
    }

    /// Inverse of `tokenize_bytes`; special tokens are skipped.
    pub fn detokenize_bytes(&self, ids: &[u32]) -> Vec<u8> {
        ids.iter().filter(|&&id| id >= BYTE_BASE).flat_map(|&id| self.token_bytes(id).iter().copied()).collect()
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        String::from_utf8_lossy(&self.detokenize_bytes(ids)).into_owned()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        let t: Tokenizer = serde_json::from_str(s)?;
        Ok(Self::from_pieces(t.pieces))
    }
}
