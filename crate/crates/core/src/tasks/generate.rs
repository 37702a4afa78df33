use rand::Rng;
use serde::{Deserialize, Serialize};

use super::distance::{build_distance_sample, DEFAULT_DISTANCE_RATIO};
use super::doclm::DocLmSample;
use super::knowledge::{build_relation_probe_sample, build_uktp_sample, pair_triples_with_sentences, KnowledgeGraph};
use super::mlm::{build_nonempty_masked_sample, Span};
use super::reorder::build_reorder_sample;
use super::Sample;
use crate::datapipe::{special, Document, Tokenizer, BYTE_BASE};
use crate::error::Result;

const SPACE: u32 = BYTE_BASE + b' ' as u32;
const NEWLINE: u32 = BYTE_BASE + b'\n' as u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSentence {
    pub text: String,
    pub tokens: Vec<u32>,
    /// Annotated phrase and entity mentions, non-overlapping.
    pub spans: Vec<Span>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDoc {
    pub id: String,
    pub title: Option<String>,
    pub paragraphs: Vec<Vec<TokenizedSentence>>,
}

impl TokenizedDoc {
    pub fn sentences(&self) -> impl Iterator<Item = &TokenizedSentence> {
        self.paragraphs.iter().flatten()
    }

    /// Sentences joined by a space, paragraphs by a newline.
    pub fn flat_tokens(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for (pi, p) in self.paragraphs.iter().enumerate() {
            if pi > 0 {
                out.push(NEWLINE);
            }
            for (si, s) in p.iter().enumerate() {
                if si > 0 {
                    out.push(SPACE);
                }
                out.extend_from_slice(&s.tokens);
            }
        }
        out
    }
}

/// Tokenizes each sentence and marks every annotation occurrence whose byte
/// range falls on token boundaries. Longer annotations claim tokens first.
pub fn tokenize_document(doc: &Document, tok: &Tokenizer) -> TokenizedDoc {
    let mut annotations: Vec<_> = doc.annotations.iter().filter(|a| !a.text.is_empty()).collect();
    annotations.sort_by(|a, b| b.text.len().cmp(&a.text.len()).then(a.text.cmp(&b.text)));
    let paragraphs = doc
        .paragraphs
        .iter()
        .map(|p| {
            p.iter()
                .map(|text| {
                    let with_off = tok.tokenize_with_offsets(text.as_bytes());
                    let mut spans: Vec<Span> = Vec::new();
                    for a in &annotations {
                        for (bs, _) in text.match_indices(a.text.as_str()) {
                            let be = bs + a.text.len();
                            let start = with_off.iter().position(|&(_, s, _)| s == bs).or_else(|| {
                                with_off.iter().position(|&(_, s, e)| s + 1 == bs && e > bs && text.as_bytes()[s] == b' ')
                            });
                            let end = with_off.iter().position(|&(_, _, e)| e == be);
                            if let (Some(s), Some(e)) = (start, end) {
                                let span = Span { start: s, end: e + 1, kind: a.kind };
                                if spans.iter().all(|o| o.end <= span.start || span.end <= o.start) {
                                    spans.push(span);
                                }
                            }
                        }
                    }
                    spans.sort_by_key(|s| s.start);
                    TokenizedSentence { text: text.clone(), tokens: with_off.iter().map(|t| t.0).collect(), spans }
                })
                .collect()
        })
        .collect();
    TokenizedDoc { id: doc.id.clone(), title: doc.title.clone(), paragraphs }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    /// Upper bound on every NLU input, special tokens included.
    pub max_len: usize,
    #[serde(default = "default_mask_rate")]
    pub mask_rate: f64,
    #[serde(default = "default_reorder_m")]
    pub reorder_max_segments: usize,
    #[serde(default = "default_ratio")]
    pub distance_ratio: [f64; 3],
    #[serde(default = "default_distance_per_doc")]
    pub distance_per_doc: usize,
    /// Document-LM samples keep at most this many document tokens.
    pub doc_lm_max_tokens: usize,
}

fn default_mask_rate() -> f64 {
    0.15
}

fn default_reorder_m() -> usize {
    3
}

fn default_ratio() -> [f64; 3] {
    DEFAULT_DISTANCE_RATIO
}

fn default_distance_per_doc() -> usize {
    2
}

impl SampleConfig {
    pub fn new(max_len: usize) -> Self {
        Self {
            max_len,
            mask_rate: default_mask_rate(),
            reorder_max_segments: default_reorder_m(),
            distance_ratio: default_ratio(),
            distance_per_doc: default_distance_per_doc(),
            doc_lm_max_tokens: 4 * max_len,
        }
    }
}

/// `[CLS]` followed by whole sentences up to `max_len` tokens; an overlong
/// sentence is cut. Spans are shifted to window positions.
fn pack_windows(doc: &TokenizedDoc, max_len: usize) -> Vec<(Vec<u32>, Vec<Span>)> {
    let mut out = Vec::new();
    let mut cur = vec![special::CLS];
    let mut spans = Vec::new();
    for s in doc.sentences() {
        let sep = usize::from(cur.len() > 1);
        if cur.len() + sep + s.tokens.len() > max_len && cur.len() > 1 {
            out.push((std::mem::replace(&mut cur, vec![special::CLS]), std::mem::take(&mut spans)));
        }
        if cur.len() > 1 {
            cur.push(SPACE);
        }
        let base = cur.len();
        let room = max_len.saturating_sub(base);
        cur.extend_from_slice(&s.tokens[..s.tokens.len().min(room)]);
        spans.extend(
            s.spans.iter().filter(|sp| sp.end <= room).map(|sp| Span { start: sp.start + base, end: sp.end + base, kind: sp.kind }),
        );
    }
    if cur.len() > 1 {
        out.push((cur, spans));
    }
    out
}

/// Builds samples for every document in `stream` (indices into `docs`, in
/// mixing order). `docs` also serves as the sentence-distance pool.
pub fn generate_samples<R: Rng + ?Sized>(
    docs: &[TokenizedDoc],
    stream: &[usize],
    kg: Option<&KnowledgeGraph>,
    tok: &Tokenizer,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    let pool: Vec<Vec<Vec<u32>>> = docs.iter().map(|d| d.sentences().map(|s| s.tokens.clone()).collect()).collect();
    let side = cfg.max_len.saturating_sub(3) / 2;
    let mut out = Vec::new();
    for &di in stream {
        let doc = &docs[di];
        for (tokens, spans) in pack_windows(doc, cfg.max_len) {
            out.push(Sample::KnowledgeMlm(build_nonempty_masked_sample(&tokens, &spans, cfg.mask_rate, rng)?));
        }
        let mut flat = doc.flat_tokens();
        flat.truncate(cfg.doc_lm_max_tokens);
        out.push(Sample::DocumentLm(DocLmSample::new(doc.id.clone(), &flat)?));
        for p in &doc.paragraphs {
            let sents: Vec<Vec<u32>> = p.iter().map(|s| s.tokens.clone()).collect();
            let mut s = build_reorder_sample(&sents, cfg.reorder_max_segments, rng)?;
            s.input.truncate(cfg.max_len);
            out.push(Sample::Reorder(s));
        }
        if pool.len() >= 2 {
            for _ in 0..cfg.distance_per_doc {
                let mut s = build_distance_sample(&pool, cfg.distance_ratio, rng)?;
                let a = &pool[s.provenance.doc_a][s.provenance.sent_a];
                let b = &pool[s.provenance.doc_b][s.provenance.sent_b];
                let mut input = vec![special::CLS];
                input.extend_from_slice(&a[..a.len().min(side)]);
                input.push(special::SEP);
                input.extend_from_slice(&b[..b.len().min(side)]);
                input.push(special::SEP);
                s.input = input;
                out.push(Sample::Distance(s));
            }
        }
        if let (Some(kg), Some(title)) = (kg, doc.title.as_deref()) {
            let texts: Vec<&str> = doc.sentences().map(|s| s.text.as_str()).collect();
            for pair in pair_triples_with_sentences(&texts, title, kg) {
                let triple = kg.triple(pair.triple);
                let u = build_uktp_sample(triple, texts[pair.sentence], kg, tok, cfg.mask_rate, rng)?;
                if u.input.len() <= cfg.max_len {
                    out.push(Sample::Uktp(u));
                }
                let p = build_relation_probe_sample(triple, texts[pair.sentence], kg, tok)?;
                if p.input.len() <= cfg.max_len {
                    out.push(Sample::RelationProbe(p));
                }
            }
        }
    }
    Ok(out)
}
