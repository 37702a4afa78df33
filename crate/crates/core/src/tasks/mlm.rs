use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::{special, SpanKind};
use crate::error::{bail_input, Result};

/// Half-open token range `[start, end)` masked as one unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub kind: SpanKind,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Token-prediction sample: `input` with `[MASK]` at `positions`, whose
/// original ids are `targets`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedSample {
    pub input: Vec<u32>,
    pub positions: Vec<usize>,
    pub targets: Vec<u32>,
    pub spans: Vec<Span>,
}

impl MaskedSample {
    /// Input with every target written back.
    pub fn reconstruct(&self) -> Vec<u32> {
        let mut out = self.input.clone();
        for (&p, &t) in self.positions.iter().zip(&self.targets) {
            out[p] = t;
        }
        out
    }

    /// Keeps the first `len` tokens. If no mask survives, the first
    /// non-special token of the window is masked instead.
    pub fn truncate(&self, len: usize) -> Self {
        if self.input.len() <= len {
            return self.clone();
        }
        let original = self.reconstruct();
        let mut input = self.input[..len].to_vec();
        let (mut positions, mut targets) = (Vec::new(), Vec::new());
        for (&p, &t) in self.positions.iter().zip(&self.targets) {
            if p < len {
                positions.push(p);
                targets.push(t);
            }
        }
        if positions.is_empty() {
            if let Some(p) = (0..len).find(|&p| original[p] >= special::COUNT) {
                input[p] = special::MASK;
                positions.push(p);
                targets.push(original[p]);
            }
        }
        let spans = self.spans.iter().filter(|s| s.end <= len).copied().collect();
        Self { input, positions, targets, spans }
    }
}

/// Sorted copy of `spans` after checking bounds and overlap.
pub fn validate_spans(len: usize, spans: &[Span]) -> Result<Vec<Span>> {
    let mut sorted = spans.to_vec();
    sorted.sort_by_key(|s| s.start);
    for (i, s) in sorted.iter().enumerate() {
        if s.start >= s.end || s.end > len {
            bail_input!("span [{}, {}) invalid for {} tokens", s.start, s.end, len);
        }
        if i > 0 && sorted[i - 1].end > s.start {
            bail_input!("spans [{}, {}) and [{}, {}) overlap", sorted[i - 1].start, sorted[i - 1].end, s.start, s.end);
        }
    }
    Ok(sorted)
}

/// Masking units: every annotated span, then each remaining non-special
/// token on its own.
fn units(tokens: &[u32], spans: &[Span]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut next = spans.iter().peekable();
    let mut i = 0;
    while i < tokens.len() {
        if let Some(s) = next.peek().filter(|s| s.start == i) {
            out.push((s.start, s.end));
            i = s.end;
            next.next();
        } else {
            if tokens[i] >= special::COUNT {
                out.push((i, i + 1));
            }
            i += 1;
        }
    }
    out
}

fn mask_units(tokens: &[u32], chosen: &[(usize, usize)], spans: Vec<Span>) -> MaskedSample {
    let mut input = tokens.to_vec();
    let (mut positions, mut targets) = (Vec::new(), Vec::new());
    for &(s, e) in chosen {
        for p in s..e {
            positions.push(p);
            targets.push(tokens[p]);
            input[p] = special::MASK;
        }
    }
    MaskedSample { input, positions, targets, spans }
}

/// Each unit is masked whole with probability `mask_rate`; special tokens
/// are never masked.
pub fn build_knowledge_masked_sample<R: Rng + ?Sized>(
    tokens: &[u32],
    spans: &[Span],
    mask_rate: f64,
    rng: &mut R,
) -> Result<MaskedSample> {
    if tokens.is_empty() {
        bail_input!("empty document");
    }
    if !(0.0..1.0).contains(&mask_rate) {
        bail_input!("mask rate {} outside [0, 1)", mask_rate);
    }
    let spans = validate_spans(tokens.len(), spans)?;
    let chosen: Vec<(usize, usize)> = units(tokens, &spans).into_iter().filter(|_| rng.gen::<f64>() < mask_rate).collect();
    Ok(mask_units(tokens, &chosen, spans))
}

/// As [`build_knowledge_masked_sample`], but masks one uniformly chosen
/// unit when the draw selects none.
pub fn build_nonempty_masked_sample<R: Rng + ?Sized>(
    tokens: &[u32],
    spans: &[Span],
    mask_rate: f64,
    rng: &mut R,
) -> Result<MaskedSample> {
    let sample = build_knowledge_masked_sample(tokens, spans, mask_rate, rng)?;
    if !sample.positions.is_empty() {
        return Ok(sample);
    }
    let all = units(tokens, &sample.spans);
    if all.is_empty() {
        bail_input!("no maskable tokens");
    }
    let pick = all[rng.gen_range(0..all.len())];
    Ok(mask_units(tokens, &[pick], sample.spans))
}
