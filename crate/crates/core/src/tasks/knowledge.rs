use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlm::build_nonempty_masked_sample;
use crate::datapipe::{special, Tokenizer};
use crate::error::{bail_input, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeTriple {
    pub head: String,
    pub relation: usize,
    pub tail: String,
}

/// A triple as written in a KG file, relation given by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleRecord {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    relations: Vec<String>,
    triples: Vec<KnowledgeTriple>,
    by_mention: HashMap<String, BTreeSet<usize>>,
}

impl KnowledgeGraph {
    pub fn new(relations: Vec<String>, triples: Vec<KnowledgeTriple>) -> Result<Self> {
        let mut by_mention: HashMap<String, BTreeSet<usize>> = HashMap::new();
        for (i, t) in triples.iter().enumerate() {
            if t.head.is_empty() || t.tail.is_empty() {
                return Err(Error::Data(format!("triple {i} has an empty mention")));
            }
            if t.relation >= relations.len() {
                return Err(Error::Data(format!("triple {i} uses unknown relation {}", t.relation)));
            }
            by_mention.entry(t.head.clone()).or_default().insert(i);
            by_mention.entry(t.tail.clone()).or_default().insert(i);
        }
        Ok(Self { relations, triples, by_mention })
    }

    /// Relation ids assigned in order of first appearance.
    pub fn from_records(records: &[TripleRecord]) -> Result<Self> {
        let mut relations: Vec<String> = Vec::new();
        let mut triples = Vec::with_capacity(records.len());
        for r in records {
            let id = match relations.iter().position(|x| *x == r.relation) {
                Some(id) => id,
                None => {
                    relations.push(r.relation.clone());
                    relations.len() - 1
                }
            };
            triples.push(KnowledgeTriple { head: r.head.clone(), relation: id, tail: r.tail.clone() });
        }
        Self::new(relations, triples)
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn triples(&self) -> &[KnowledgeTriple] {
        &self.triples
    }

    pub fn triple(&self, i: usize) -> &KnowledgeTriple {
        &self.triples[i]
    }

    /// Triples with `mention` as head or tail, ascending.
    pub fn mentioning(&self, mention: &str) -> Vec<usize> {
        self.by_mention.get(mention).map(|s| s.iter().copied().collect()).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TriplePair {
    pub triple: usize,
    pub sentence: usize,
}

/// Triples whose head or tail is the title, paired with every sentence that
/// contains both mentions. Sorted by (triple, sentence).
pub fn pair_triples_with_sentences<S: AsRef<str>>(sentences: &[S], title: &str, kg: &KnowledgeGraph) -> Vec<TriplePair> {
    let mut out = Vec::new();
    for t in kg.mentioning(title) {
        let tr = kg.triple(t);
        for (s, sent) in sentences.iter().enumerate() {
            let sent = sent.as_ref();
            if sent.contains(tr.head.as_str()) && sent.contains(tr.tail.as_str()) {
                out.push(TriplePair { triple: t, sentence: s });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UktpMode {
    MaskRelation,
    MaskWords,
}

/// `[CLS] [HD] head [/HD] relation [TL] tail [/TL] [SEP] sentence [SEP]`
/// with either the relation or some sentence words masked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UktpSample {
    pub input: Vec<u32>,
    pub positions: Vec<usize>,
    pub targets: Vec<u32>,
    pub mode: UktpMode,
    /// Positions of `[HD]`, `[/HD]`, `[TL]`, `[/TL]`.
    pub markers: [usize; 4],
    pub relation_region: (usize, usize),
    pub sentence_region: (usize, usize),
    pub relation: usize,
}

/// Triple and sentence laid out with entity markers; returns tokens,
/// markers, relation region and sentence region.
fn layout(
    triple: &KnowledgeTriple,
    sentence: &str,
    kg: &KnowledgeGraph,
    tok: &Tokenizer,
) -> Result<(Vec<u32>, [usize; 4], (usize, usize), (usize, usize))> {
    if !sentence.contains(triple.head.as_str()) || !sentence.contains(triple.tail.as_str()) {
        bail_input!("sentence does not mention both `{}` and `{}`", triple.head, triple.tail);
    }
    let relation = kg.relations().get(triple.relation).ok_or_else(|| Error::Data("unknown relation".into()))?;
    let mut ids = vec![special::CLS, special::HD];
    ids.extend(tok.tokenize(&triple.head));
    let hd_end = ids.len();
    ids.push(special::HD_END);
    let rel_start = ids.len();
    ids.extend(tok.tokenize(relation));
    let rel_end = ids.len();
    ids.push(special::TL);
    ids.extend(tok.tokenize(&triple.tail));
    let tl_end = ids.len();
    ids.push(special::TL_END);
    ids.push(special::SEP);
    let sent_start = ids.len();
    ids.extend(tok.tokenize(sentence));
    let sent_end = ids.len();
    ids.push(special::SEP);
    Ok((ids, [1, hd_end, rel_end, tl_end], (rel_start, rel_end), (sent_start, sent_end)))
}

/// Fair coin between masking every relation token and masking sentence
/// words at `word_mask_rate` (at least one).
pub fn build_uktp_sample<R: Rng + ?Sized>(
    triple: &KnowledgeTriple,
    sentence: &str,
    kg: &KnowledgeGraph,
    tok: &Tokenizer,
    word_mask_rate: f64,
    rng: &mut R,
) -> Result<UktpSample> {
    let (mut input, markers, rel, sent) = layout(triple, sentence, kg, tok)?;
    let mode = if rng.gen_bool(0.5) { UktpMode::MaskRelation } else { UktpMode::MaskWords };
    let (positions, targets): (Vec<usize>, Vec<u32>) = match mode {
        UktpMode::MaskRelation => (rel.0..rel.1).map(|p| (p, input[p])).unzip(),
        UktpMode::MaskWords => {
            let m = build_nonempty_masked_sample(&input[sent.0..sent.1], &[], word_mask_rate, rng)?;
            m.positions.iter().map(|p| p + sent.0).zip(m.targets).unzip()
        }
    };
    for &p in &positions {
        input[p] = special::MASK;
    }
    Ok(UktpSample { input, positions, targets, mode, markers, relation_region: rel, sentence_region: sent, relation: triple.relation })
}

/// Relation classification from the four marker representations; the
/// relation slot is left empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationProbeSample {
    pub input: Vec<u32>,
    pub markers: [usize; 4],
    pub label: usize,
}

pub fn build_relation_probe_sample(
    triple: &KnowledgeTriple,
    sentence: &str,
    kg: &KnowledgeGraph,
    tok: &Tokenizer,
) -> Result<RelationProbeSample> {
    let (ids, markers, rel, _) = layout(triple, sentence, kg, tok)?;
    let gap = rel.1 - rel.0;
    let mut input = ids[..rel.0].to_vec();
    input.extend_from_slice(&ids[rel.1..]);
    let markers = [markers[0], markers[1], markers[2] - gap, markers[3] - gap];
    Ok(RelationProbeSample { input, markers, label: triple.relation })
}
