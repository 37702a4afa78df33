//! Corpus cleaning: character-run, paragraph and document deduplication,
//! sentence segmentation, short-sentence filtering, tokenization and
//! multiplier-weighted mixing.

mod text;
mod tokenizer;

pub use text::{
    dedup_chars, dedup_paragraphs, doc_fingerprint, filter_short_sentences, md5_u128, segment_sentences, word_count,
    words, DEFAULT_REPEATABLE, MAX_DEDUP_PARAGRAPH_SENTENCES,
};
pub use tokenizer::{runs, special, Tokenizer, BYTE_BASE, LEARNED_BASE, MAX_PIECE_LEN};

use std::collections::HashSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanKind {
    Word,
    Phrase,
    Entity,
}

/// A phrase or entity mention to be masked as a unit wherever it occurs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub text: String,
    pub kind: SpanKind,
}

/// One input line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    /// Overwritten by the dataset spec the file is listed under.
    #[serde(default)]
    pub dataset: String,
    pub doc_id: String,
    #[serde(default)]
    pub title: Option<String>,
    pub text: String,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub dataset: String,
    pub title: Option<String>,
    pub paragraphs: Vec<Vec<String>>,
    pub raw: String,
    pub annotations: Vec<Annotation>,
}

impl Document {
    pub fn sentences(&self) -> impl Iterator<Item = &String> {
        self.paragraphs.iter().flatten()
    }

    pub fn sentence_count(&self) -> usize {
        self.paragraphs.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub path: PathBuf,
    pub multiplier: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_repeatable")]
    pub repeatable: Vec<char>,
    #[serde(default = "default_min_words")]
    pub min_words: usize,
}

fn default_repeatable() -> Vec<char> {
    DEFAULT_REPEATABLE.to_vec()
}

fn default_min_words() -> usize {
    10
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { repeatable: default_repeatable(), min_words: default_min_words() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub docs_in: usize,
    pub chars_collapsed: usize,
    pub paragraphs_removed: usize,
    pub duplicate_docs: usize,
    pub short_sentences_removed: usize,
    pub empty_docs: usize,
    pub docs_out: usize,
}

/// Lines become paragraphs; each line is split into trimmed, non-empty
/// sentences.
pub fn split_paragraphs(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|line| {
            segment_sentences(line).into_iter().map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
        })
        .filter(|p: &Vec<String>| !p.is_empty())
        .collect()
}

/// Runs the cleaning stages in order: character runs, segmentation,
/// consecutive paragraphs, document fingerprint (first occurrence wins),
/// short sentences. Input order fixes which duplicate survives.
pub fn clean_corpus(records: &[RawRecord], cfg: &PipelineConfig) -> (Vec<Document>, PipelineStats) {
    let mut stats = PipelineStats { docs_in: records.len(), ..Default::default() };
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for r in records {
        let text = dedup_chars(&r.text, &cfg.repeatable);
        stats.chars_collapsed += r.text.chars().count() - text.chars().count();
        let (paragraphs, removed) = dedup_paragraphs(&split_paragraphs(&text));
        stats.paragraphs_removed += removed;
        let sentences: Vec<&String> = paragraphs.iter().flatten().collect();
        let Ok(fp) = doc_fingerprint(&sentences) else {
            stats.empty_docs += 1;
            continue;
        };
        if !seen.insert(fp) {
            stats.duplicate_docs += 1;
            continue;
        }
        let (paragraphs, short) = filter_short_sentences(&paragraphs, cfg.min_words);
        stats.short_sentences_removed += short;
        if paragraphs.is_empty() {
            stats.empty_docs += 1;
            continue;
        }
        docs.push(Document {
            id: r.doc_id.clone(),
            dataset: r.dataset.clone(),
            title: r.title.clone(),
            paragraphs,
            raw: r.text.clone(),
            annotations: r.annotations.clone(),
        });
    }
    stats.docs_out = docs.len();
    (docs, stats)
}

/// Indices into `docs` for one epoch: each document repeated by its
/// dataset's multiplier, then shuffled.
pub fn mix_datasets<R: Rng + ?Sized>(specs: &[DatasetSpec], docs: &[Document], rng: &mut R) -> Result<Vec<usize>> {
    if specs.is_empty() {
        return Err(Error::Data("no datasets to mix".into()));
    }
    let mut stream = Vec::new();
    for spec in specs {
        if spec.multiplier == 0 {
            return Err(Error::Config(format!("dataset `{}` has multiplier 0", spec.name)));
        }
        let members: Vec<usize> = (0..docs.len()).filter(|&i| docs[i].dataset == spec.name).collect();
        if members.is_empty() {
            return Err(Error::Data(format!("dataset `{}` has no documents", spec.name)));
        }
        for _ in 0..spec.multiplier {
            stream.extend_from_slice(&members);
        }
    }
    if let Some(d) = docs.iter().find(|d| !specs.iter().any(|s| s.name == d.dataset)) {
        return Err(Error::Data(format!("document `{}` belongs to unlisted dataset `{}`", d.id, d.dataset)));
    }
    stream.shuffle(rng);
    Ok(stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn doc(dataset: &str, id: usize) -> Document {
        Document {
            id: id.to_string(),
            dataset: dataset.into(),
            title: None,
            paragraphs: vec![vec![format!("s{id}")]],
            raw: String::new(),
            annotations: vec![],
        }
    }

    fn spec(name: &str, multiplier: u32) -> DatasetSpec {
        DatasetSpec { name: name.into(), path: PathBuf::new(), multiplier }
    }

    #[test]
    fn multiplier_counts() {
        let mut docs: Vec<Document> = (0..10).map(|i| doc("a", i)).collect();
        docs.extend((10..40).map(|i| doc("b", i)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = mix_datasets(&[spec("a", 2), spec("b", 1)], &docs, &mut rng).unwrap();
        assert_eq!(s.len(), 50);
        assert_eq!(s.iter().filter(|&&i| i < 10).count(), 20);
        let twenty = mix_datasets(&[spec("a", 20)], &docs[..10], &mut rng).unwrap();
        assert!((0..10).all(|i| twenty.iter().filter(|&&k| k == i).count() == 20));
    }

    #[test]
    fn unit_multipliers_permute() {
        let docs: Vec<Document> = (0..7).map(|i| doc("a", i)).collect();
        let mut s = mix_datasets(&[spec("a", 1)], &docs, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        s.sort();
        assert_eq!(s, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn missing_dataset_rejected() {
        let docs = vec![doc("a", 0)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(mix_datasets(&[spec("a", 1), spec("z", 1)], &docs, &mut rng).is_err());
        assert!(mix_datasets(&[], &docs, &mut rng).is_err());
    }
}
