use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::prompt::{apply_prompt, exact_match, rouge_1, template, token_f1, NLI_CANDIDATES, SIMILARITY_CANDIDATES};
use super::search::{beam_search, BeamConfig, SpanTrie};
use super::{max_gen_len, score_choices, CausalLm, MultiChoiceItem, ScoreScope};
use crate::datapipe::Tokenizer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Multichoice,
    Generation,
}

/// One line of an eval file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: ItemKind,
    /// `qa`, `nli`, `similarity`, or `custom` with `template` set.
    pub template_id: String,
    #[serde(default)]
    pub template: Option<String>,
    #[serde(default)]
    pub fields: BTreeMap<String, String>,
    /// Multiple-choice fillers; `nli` and `similarity` supply defaults.
    #[serde(default)]
    pub candidates: Vec<String>,
    /// Candidate index or text for multiple choice, answer text for
    /// generation.
    pub gold: Value,
    /// Text that restrains generation to its spans.
    #[serde(default)]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub kind: ItemKind,
    pub prediction: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ppl: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge_1: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub multichoice_items: usize,
    pub accuracy: Option<f64>,
    pub generation_items: usize,
    pub exact_match: Option<f64>,
    pub f1: Option<f64>,
    pub rouge_1: Option<f64>,
    pub max_gen_len: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: Vec<ItemResult>,
    pub summary: Summary,
}

fn item_template(item: &EvalItem) -> Result<String> {
    match (&item.template, template(&item.template_id)) {
        (Some(t), _) => Ok(t.clone()),
        (None, Some(t)) => Ok(t.to_string()),
        (None, None) => Err(Error::Data(format!("item {}: unknown template `{}`", item.id, item.template_id))),
    }
}

fn multichoice(item: &EvalItem) -> Result<MultiChoiceItem> {
    let candidates: Vec<String> = if !item.candidates.is_empty() {
        item.candidates.clone()
    } else {
        match item.template_id.as_str() {
            "nli" => NLI_CANDIDATES.iter().map(|s| s.to_string()).collect(),
            "similarity" => SIMILARITY_CANDIDATES.iter().map(|s| s.to_string()).collect(),
            _ => return Err(Error::Data(format!("item {}: no candidates", item.id))),
        }
    };
    let gold = match &item.gold {
        Value::Number(n) => n.as_u64().map(|g| g as usize),
        Value::String(s) => candidates.iter().position(|c| c == s),
        _ => None,
    }
    .ok_or_else(|| Error::Data(format!("item {}: gold is neither an index nor a candidate", item.id)))?;
    Ok(MultiChoiceItem { template: item_template(item)?, fields: item.fields.clone(), candidates, gold })
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores every item in order. Generation length is the 95th-percentile
/// gold answer length (in tokens) over the file's generation items.
pub fn run_eval<M: CausalLm + ?Sized>(
    model: &M,
    tok: &Tokenizer,
    items: &[EvalItem],
    beam_width: usize,
    scope: ScoreScope,
) -> Result<EvalReport> {
    let gold_text = |it: &EvalItem| match &it.gold {
        Value::String(s) => Ok(s.clone()),
        _ => Err(Error::Data(format!("item {}: generation gold must be text", it.id))),
    };
    let gen_lens: Vec<usize> = items
        .iter()
        .filter(|i| i.kind == ItemKind::Generation)
        .map(|i| gold_text(i).map(|g| tok.tokenize(&g).len().max(1)))
        .collect::<Result<_>>()?;
    let gen_len = if gen_lens.is_empty() { None } else { Some(max_gen_len(&gen_lens)?) };

    let mut results = Vec::with_capacity(items.len());
    for item in items {
        let r = match item.kind {
            ItemKind::Multichoice => {
                let mc = multichoice(item)?;
                let s = score_choices(model, tok, &mc, scope)?;
                ItemResult {
                    id: item.id.clone(),
                    kind: item.kind,
                    prediction: mc.candidates[s.predicted].clone(),
                    correct: Some(s.predicted == mc.gold),
                    ppl: Some(s.ppl),
                    exact_match: None,
                    f1: None,
                    rouge_1: None,
                }
            }
            ItemKind::Generation => {
                let gold = gold_text(item)?;
                let max_len = gen_len.expect("generation items present");
                let prompt = tok.tokenize(&apply_prompt(&item_template(item)?, &item.fields)?);
                let trie = match &item.source {
                    Some(src) => Some(SpanTrie::build(&tok.tokenize(src), max_len)?),
                    None => None,
                };
                let cfg = BeamConfig { width: beam_width, max_len: max_len + 1 };
                let hyp = beam_search(model, &prompt, cfg, trie.as_ref())?;
                let prediction = tok.detokenize(&hyp.tokens);
                ItemResult {
                    id: item.id.clone(),
                    kind: item.kind,
                    correct: None,
                    ppl: None,
                    exact_match: Some(exact_match(&prediction, &gold)),
                    f1: Some(token_f1(&prediction, &gold)),
                    rouge_1: Some(rouge_1(&prediction, &gold)),
                    prediction,
                }
            }
        };
        results.push(r);
    }
    let mc: Vec<&ItemResult> = results.iter().filter(|r| r.kind == ItemKind::Multichoice).collect();
    let gen: Vec<&ItemResult> = results.iter().filter(|r| r.kind == ItemKind::Generation).collect();
    let summary = Summary {
        multichoice_items: mc.len(),
        accuracy: mean(mc.iter().map(|r| f64::from(u8::from(r.correct == Some(true))))),
        generation_items: gen.len(),
        exact_match: mean(gen.iter().map(|r| f64::from(u8::from(r.exact_match == Some(true))))),
        f1: mean(gen.iter().filter_map(|r| r.f1)),
        rouge_1: mean(gen.iter().filter_map(|r| r.rouge_1)),
        max_gen_len: gen_len,
    };
    Ok(EvalReport { items: results, summary })
}
