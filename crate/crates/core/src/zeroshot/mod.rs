//! Zero-shot evaluation: perplexity-ranked multiple choice and
//! trie-restrained beam search generation.

mod harness;
mod prompt;
mod search;

pub use harness::{run_eval, EvalItem, EvalReport, ItemKind, ItemResult, Summary};
pub use prompt::{
    apply_prompt, exact_match, normalize_answer, rouge_1, sample_negatives, template, token_f1, NLI_CANDIDATES,
    NLI_TEMPLATE, QA_TEMPLATE, SIMILARITY_CANDIDATES, SIMILARITY_TEMPLATE,
};
pub use search::{beam_search, exhaustive_search, BeamConfig, BeamHypothesis, SpanTrie, DEFAULT_BEAM_WIDTH};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datapipe::{special, Tokenizer};
use crate::error::{bail_input, Result};
use crate::framework::UnifiedModel;

/// A left-to-right scorer. Row `t` of `log_probs(ctx)` is the
/// log-distribution of the token after `ctx[..=t]`.
pub trait CausalLm {
    fn vocab_size(&self) -> usize;

    fn log_probs(&self, context: &[u32]) -> Result<Vec<Vec<f64>>>;

    fn last_log_probs(&self, context: &[u32]) -> Result<Vec<f64>> {
        Ok(self.log_probs(context)?.pop().unwrap_or_default())
    }
}

impl CausalLm for UnifiedModel {
    fn vocab_size(&self) -> usize {
        self.cfg.vocab_size
    }

    fn log_probs(&self, context: &[u32]) -> Result<Vec<Vec<f64>>> {
        self.next_token_log_probs(context)
    }
}

/// Probability `1 / V` for every token.
#[derive(Debug, Clone, Copy)]
pub struct UniformLm {
    pub vocab_size: usize,
}

impl CausalLm for UniformLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn log_probs(&self, context: &[u32]) -> Result<Vec<Vec<f64>>> {
        let lp = -(self.vocab_size as f64).ln();
        Ok(vec![vec![lp; self.vocab_size]; context.len()])
    }
}

/// `exp(-(1/n) Σ log p(token_t | [BOS] tokens_<t))` over tokens from
/// `from` on; earlier tokens only condition.
pub fn per_token_ppl_from<M: CausalLm + ?Sized>(model: &M, tokens: &[u32], from: usize) -> Result<f64> {
    if tokens.is_empty() {
        bail_input!("perplexity of an empty sequence");
    }
    if from >= tokens.len() {
        bail_input!("scored range starts past the sequence end");
    }
    let mut ctx = vec![special::BOS];
    ctx.extend_from_slice(&tokens[..tokens.len() - 1]);
    let rows = model.log_probs(&ctx)?;
    let nll: f64 = (from..tokens.len()).map(|t| -rows[t][tokens[t] as usize]).sum();
    Ok((nll / (tokens.len() - from) as f64).exp())
}

pub fn per_token_ppl<M: CausalLm + ?Sized>(model: &M, tokens: &[u32]) -> Result<f64> {
    per_token_ppl_from(model, tokens, 0)
}

/// Which tokens a multiple-choice perplexity averages over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreScope {
    /// Context and candidate together.
    #[default]
    FullText,
    /// Only the tokens from the candidate onwards.
    CandidateSpan,
}

/// A template with a `$BLANK` slot and the candidate fillers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiChoiceItem {
    pub template: String,
    #[serde(default)]
    pub fields: BTreeMap<String, String>,
    pub candidates: Vec<String>,
    pub gold: usize,
}

impl MultiChoiceItem {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.len() < 2 {
            bail_input!("multiple choice needs at least 2 candidates");
        }
        if self.gold >= self.candidates.len() {
            bail_input!("gold index {} outside {} candidates", self.gold, self.candidates.len());
        }
        Ok(())
    }

    /// Template with the candidate in the blank.
    pub fn fill(&self, candidate: &str) -> Result<String> {
        let mut fields = self.fields.clone();
        fields.insert("BLANK".into(), candidate.into());
        apply_prompt(&self.template, &fields)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceScores {
    pub predicted: usize,
    pub ppl: Vec<f64>,
    pub tie: bool,
}

/// Lowest per-token perplexity wins; ties go to the lowest index.
pub fn score_choices<M: CausalLm + ?Sized>(
    model: &M,
    tok: &Tokenizer,
    item: &MultiChoiceItem,
    scope: ScoreScope,
) -> Result<ChoiceScores> {
    item.validate()?;
    let mut ppl = Vec::with_capacity(item.candidates.len());
    for cand in &item.candidates {
        let text = item.fill(cand)?;
        let tokens = tok.tokenize(&text);
        let from = match scope {
            ScoreScope::FullText => 0,
            ScoreScope::CandidateSpan => {
                let prefix = item.template.split("$BLANK").next().unwrap_or("");
                let prefix = apply_prompt(prefix, &item.fields)?;
                tok.tokenize(&prefix).len().min(tokens.len() - 1)
            }
        };
        ppl.push(per_token_ppl_from(model, &tokens, from)?);
    }
    let best = ppl.iter().cloned().fold(f64::INFINITY, f64::min);
    let predicted = ppl.iter().position(|&p| p == best).unwrap_or(0);
    let tie = ppl.iter().filter(|&&p| p == best).count() > 1;
    if tie {
        log::info!("tied perplexity {best}; choosing candidate {predicted}");
    }
    Ok(ChoiceScores { predicted, ppl, tie })
}

/// Nearest-rank 95th percentile: smallest `L` with at least 95% of lengths
/// `<= L`.
pub fn max_gen_len(lengths: &[usize]) -> Result<usize> {
    if lengths.is_empty() {
        bail_input!("no answer lengths");
    }
    let mut s = lengths.to_vec();
    s.sort_unstable();
    let rank = (0.95 * s.len() as f64).ceil() as usize;
    Ok(s[rank.max(1) - 1])
}
