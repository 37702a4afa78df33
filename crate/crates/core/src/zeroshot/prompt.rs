use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::Rng;
use regex::Regex;

use crate::datapipe::words;
use crate::error::{bail_input, Result};

pub const QA_TEMPLATE: &str = "QUESTION: $QUESTION? ANSWER:";
pub const NLI_TEMPLATE: &str = "$SENT_A? $BLANK, $SENT_B";
pub const NLI_CANDIDATES: [&str; 3] = ["No", "Yes", "Maybe"];
pub const SIMILARITY_TEMPLATE: &str = "$SENT_A? $BLANK, $SENT_B";
pub const SIMILARITY_CANDIDATES: [&str; 2] = ["No", "Yes"];

/// Built-in template by id: `qa`, `nli`, `similarity`.
pub fn template(id: &str) -> Option<&'static str> {
    match id {
        "qa" => Some(QA_TEMPLATE),
        "nli" => Some(NLI_TEMPLATE),
        "similarity" => Some(SIMILARITY_TEMPLATE),
        _ => None,
    }
}

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\$([A-Z][A-Z0-9_]*)").expect("static pattern"))
}

/// Replaces each `$NAME` with `fields[NAME]`.
pub fn apply_prompt(template: &str, fields: &BTreeMap<String, String>) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut last = 0;
    for cap in placeholder().captures_iter(template) {
        let whole = cap.get(0).expect("match");
        let name = &cap[1];
        let Some(value) = fields.get(name) else {
            bail_input!("template placeholder ${} is unbound", name);
        };
        if value.is_empty() {
            log::warn!("template field ${name} is empty");
        }
        out.push_str(&template[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&template[last..]);
    Ok(out)
}

/// Lowercased word units; punctuation and whitespace dropped.
pub fn normalize_answer(s: &str) -> Vec<String> {
    words(s).into_iter().map(str::to_lowercase).collect()
}

pub fn exact_match(pred: &str, gold: &str) -> bool {
    normalize_answer(pred) == normalize_answer(gold)
}

fn overlap(pred: &[String], gold: &[String]) -> usize {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for g in gold {
        *counts.entry(g).or_default() += 1;
    }
    pred.iter()
        .filter(|p| match counts.get_mut(p.as_str()) {
            Some(c) if *c > 0 => {
                *c -= 1;
                true
            }
            _ => false,
        })
        .count()
}

/// Multiset token overlap F1 after normalization.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let (p, g) = (normalize_answer(pred), normalize_answer(gold));
    if p.is_empty() || g.is_empty() {
        return f64::from(u8::from(p == g));
    }
    let common = overlap(&p, &g) as f64;
    if common == 0.0 {
        return 0.0;
    }
    let (precision, recall) = (common / p.len() as f64, common / g.len() as f64);
    2.0 * precision * recall / (precision + recall)
}

/// Unigram recall of the reference after normalization.
pub fn rouge_1(pred: &str, gold: &str) -> f64 {
    let (p, g) = (normalize_answer(pred), normalize_answer(gold));
    if g.is_empty() {
        return f64::from(u8::from(p.is_empty()));
    }
    overlap(&p, &g) as f64 / g.len() as f64
}

/// `k` distinct label indices other than `gold`, uniformly drawn.
pub fn sample_negatives<R: Rng + ?Sized>(num_labels: usize, gold: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if gold >= num_labels || k >= num_labels {
        bail_input!("cannot draw {} negatives from {} labels", k, num_labels);
    }
    Ok(sample(rng, num_labels - 1, k).into_iter().map(|i| if i >= gold { i + 1 } else { i }).collect())
}
