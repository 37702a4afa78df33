use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, md5_hex, read_jsonl, read_jsonl_strict, write_jsonl, RunConfig};
use crate::datapipe::{clean_corpus, mix_datasets, PipelineStats, RawRecord, Tokenizer};
use crate::error::{Error, Result};
use crate::tasks::{generate_samples, tokenize_document, KnowledgeGraph, Sample, SampleRecord, TripleRecord};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub lines_read: usize,
    pub malformed_records: usize,
    pub pipeline: PipelineStats,
    pub knowledge_triples: usize,
    pub vocab_size: usize,
    pub tokens: usize,
    pub stream_len: usize,
    pub samples: BTreeMap<String, usize>,
    /// Hex MD5 of `tokenizer.json`.
    pub tokenizer_md5: String,
}

fn load_records(cfg: &RunConfig, stats: &mut PreprocessStats) -> Result<Vec<RawRecord>> {
    let mut records = Vec::new();
    for spec in &cfg.data.datasets {
        if !spec.path.is_file() {
            return Err(Error::Data(format!("dataset `{}`: missing file {}", spec.name, spec.path.display())));
        }
        let r = read_jsonl::<RawRecord>(&spec.path)?;
        stats.lines_read += r.lines;
        stats.malformed_records += r.malformed;
        records.extend(r.items.into_iter().map(|mut rec| {
            rec.dataset = spec.name.clone();
            rec
        }));
    }
    let limit = cfg.data.max_malformed_fraction * stats.lines_read as f64;
    if stats.malformed_records as f64 > limit {
        return Err(Error::Data(format!(
            "{} of {} records malformed, above the {} threshold",
            stats.malformed_records, stats.lines_read, cfg.data.max_malformed_fraction
        )));
    }
    Ok(records)
}

fn load_knowledge(cfg: &RunConfig) -> Result<Option<KnowledgeGraph>> {
    let Some(path) = &cfg.data.knowledge else {
        return Ok(None);
    };
    let records: Vec<TripleRecord> = read_jsonl_strict(path)?;
    let kg = KnowledgeGraph::from_records(&records)?;
    if kg.relations().len() > cfg.model.relation_classes {
        return Err(Error::Config(format!(
            "knowledge graph has {} relations; model.relation_classes is {}",
            kg.relations().len(),
            cfg.model.relation_classes
        )));
    }
    Ok(Some(kg))
}

/// Reads the corpora, cleans, learns the vocabulary, mixes by multiplier
/// and writes `archive.jsonl`, `tokenizer.json` and `preprocess_stats.json`.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<PreprocessStats> {
    let mut stats = PreprocessStats::default();
    let records = load_records(cfg, &mut stats)?;
    let kg = load_knowledge(cfg)?;
    stats.knowledge_triples = kg.as_ref().map_or(0, |k| k.triples().len());

    let (docs, pipeline) = clean_corpus(&records, &cfg.data.pipeline);
    stats.pipeline = pipeline;
    let texts: Vec<String> = docs.iter().flat_map(|d| d.paragraphs.iter().map(|p| p.join(" "))).collect();
    let tok = Tokenizer::train(&texts, cfg.model.vocab_size);
    stats.vocab_size = tok.vocab_size();

    let mut samples: Vec<Sample> = Vec::new();
    if !docs.is_empty() {
        let specs: Vec<_> = cfg
            .data
            .datasets
            .iter()
            .filter(|s| {
                let present = docs.iter().any(|d| d.dataset == s.name);
                if !present {
                    log::warn!("dataset `{}` has no documents after cleaning", s.name);
                }
                present
            })
            .cloned()
            .collect();
        let stream = mix_datasets(&specs, &docs, &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "mix", 0)))?;
        stats.stream_len = stream.len();
        let tokenized: Vec<_> = docs.iter().map(|d| tokenize_document(d, &tok)).collect();
        stats.tokens = tokenized.iter().map(|d| d.flat_tokens().len()).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "samples", 0));
        samples = generate_samples(&tokenized, &stream, kg.as_ref(), &tok, &cfg.data.samples, &mut rng)?;
    }
    for s in &samples {
        *stats.samples.entry(s.task().as_str().to_string()).or_default() += 1;
    }

    std::fs::create_dir_all(&cfg.output_dir)?;
    let tok_json = tok.to_json()?;
    std::fs::write(cfg.tokenizer_path(), &tok_json)?;
    stats.tokenizer_md5 = md5_hex(tok_json.as_bytes());
    let recs = samples.iter().map(Sample::to_record).collect::<Result<Vec<SampleRecord>>>()?;
    write_jsonl(&cfg.archive_path(), &recs)?;
    std::fs::write(cfg.stats_path(), serde_json::to_string_pretty(&stats)?)?;
    log::info!("preprocess: {} docs in, {} out, {} samples", stats.pipeline.docs_in, stats.pipeline.docs_out, samples.len());
    Ok(stats)
}

pub fn read_archive(path: &Path) -> Result<Vec<Sample>> {
    if !path.is_file() {
        return Err(Error::Data(format!("no sample archive at {}; run preprocess first", path.display())));
    }
    read_jsonl_strict::<SampleRecord>(path)?.iter().map(Sample::from_record).collect()
}

pub(crate) fn load_tokenizer(cfg: &RunConfig) -> Result<(Tokenizer, String)> {
    let path = cfg.tokenizer_path();
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok((Tokenizer::from_json(&text)?, md5_hex(text.as_bytes())))
}
