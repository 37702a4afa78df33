use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CausalLm;
use crate::datapipe::special;
use crate::error::{bail_input, Result};

#[derive(Debug, Clone, Default)]
struct Node {
    children: BTreeMap<u32, usize>,
    terminal: bool,
}

/// Every contiguous span of the source up to `max_span` tokens. Every
/// non-root node ends such a span, so all of them are terminal.
#[derive(Debug, Clone)]
pub struct SpanTrie {
    nodes: Vec<Node>,
    max_span: usize,
}

pub const ROOT: usize = 0;

impl SpanTrie {
    pub fn build(source: &[u32], max_span: usize) -> Result<Self> {
        if max_span == 0 {
            bail_input!("max span must be at least 1");
        }
        let mut t = Self { nodes: vec![Node::default()], max_span };
        for start in 0..source.len() {
            let mut cur = ROOT;
            for &tok in &source[start..source.len().min(start + max_span)] {
                cur = match t.nodes[cur].children.get(&tok) {
                    Some(&n) => n,
                    None => {
                        t.nodes.push(Node::default());
                        let n = t.nodes.len() - 1;
                        t.nodes[cur].children.insert(tok, n);
                        n
                    }
                };
                t.nodes[cur].terminal = true;
            }
        }
        Ok(t)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes[ROOT].children.is_empty()
    }

    pub fn max_span(&self) -> usize {
        self.max_span
    }

    pub fn child(&self, node: usize, tok: u32) -> Option<usize> {
        self.nodes[node].children.get(&tok).copied()
    }

    pub fn children(&self, node: usize) -> impl Iterator<Item = (u32, usize)> + '_ {
        self.nodes[node].children.iter().map(|(&t, &n)| (t, n))
    }

    pub fn is_terminal(&self, node: usize) -> bool {
        self.nodes[node].terminal
    }

    pub fn walk(&self, seq: &[u32]) -> Option<usize> {
        seq.iter().try_fold(ROOT, |n, &t| self.child(n, t))
    }

    pub fn contains(&self, seq: &[u32]) -> bool {
        self.walk(seq).is_some_and(|n| self.is_terminal(n))
    }

    /// All stored spans in depth-first order.
    pub fn spans(&self) -> Vec<Vec<u32>> {
        let mut out = Vec::new();
        let mut stack = vec![(ROOT, Vec::new())];
        while let Some((n, prefix)) = stack.pop() {
            if self.is_terminal(n) {
                out.push(prefix.clone());
            }
            for (t, c) in self.children(n) {
                let mut p = prefix.clone();
                p.push(t);
                stack.push((c, p));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamHypothesis {
    /// Generated tokens, `[EOS]` excluded.
    pub tokens: Vec<u32>,
    /// Sum of per-step log-probabilities, `[EOS]` included when finished.
    pub log_prob: f64,
    #[serde(skip)]
    pub trie_node: Option<usize>,
    pub finished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub width: usize,
    pub max_len: usize,
}

pub const DEFAULT_BEAM_WIDTH: usize = 8;

impl Default for BeamConfig {
    fn default() -> Self {
        Self { width: DEFAULT_BEAM_WIDTH, max_len: 32 }
    }
}

/// Higher score first; equal scores fall back to token order so results do
/// not depend on expansion order.
fn rank(a: &BeamHypothesis, b: &BeamHypothesis) -> Ordering {
    b.log_prob.partial_cmp(&a.log_prob).unwrap_or(Ordering::Equal).then_with(|| a.tokens.cmp(&b.tokens)).then(b.finished.cmp(&a.finished))
}

/// Next steps of `h`: every vocabulary token, or under a trie only its
/// continuations plus `[EOS]` at terminal nodes.
fn expand(h: &BeamHypothesis, lp: &[f64], trie: Option<&SpanTrie>, out: &mut Vec<BeamHypothesis>) {
    let mut push = |tok: u32, node: Option<usize>| {
        let finished = tok == special::EOS;
        let mut tokens = h.tokens.clone();
        if !finished {
            tokens.push(tok);
        }
        out.push(BeamHypothesis { tokens, log_prob: h.log_prob + lp[tok as usize], trie_node: node, finished });
    };
    match (trie, h.trie_node) {
        (Some(t), Some(node)) => {
            for (tok, child) in t.children(node) {
                if tok != special::EOS && (tok as usize) < lp.len() {
                    push(tok, Some(child));
                }
            }
            if node != ROOT && t.is_terminal(node) {
                push(special::EOS, Some(node));
            }
        }
        _ => {
            for tok in 0..lp.len() as u32 {
                push(tok, None);
            }
        }
    }
}

/// Beam search without length penalty. All candidates of a step compete for
/// `width` slots; those ending in `[EOS]` retire. Stops once the best
/// retired score is at least every live score, since scores only fall.
pub fn beam_search<M: CausalLm + ?Sized>(
    model: &M,
    prompt: &[u32],
    cfg: BeamConfig,
    trie: Option<&SpanTrie>,
) -> Result<BeamHypothesis> {
    if cfg.width == 0 || cfg.max_len == 0 {
        bail_input!("beam width and max length must be at least 1");
    }
    if trie.is_some_and(SpanTrie::is_empty) {
        bail_input!("restraining trie is empty");
    }
    let mut live = vec![BeamHypothesis { tokens: vec![], log_prob: 0.0, trie_node: trie.map(|_| ROOT), finished: false }];
    let mut done: Vec<BeamHypothesis> = Vec::new();
    for _ in 0..cfg.max_len {
        let mut cands = Vec::new();
        for h in &live {
            let mut ctx = prompt.to_vec();
            ctx.extend_from_slice(&h.tokens);
            let lp = model.last_log_probs(&ctx)?;
            expand(h, &lp, trie, &mut cands);
        }
        cands.sort_by(rank);
        cands.truncate(cfg.width);
        let (fin, cont): (Vec<_>, Vec<_>) = cands.into_iter().partition(|h| h.finished);
        done.extend(fin);
        live = cont;
        done.sort_by(rank);
        let best_done = done.first().map(|h| h.log_prob);
        let best_live = live.first().map(|h| h.log_prob);
        match (best_done, best_live) {
            (_, None) => break,
            (Some(d), Some(l)) if d >= l => break,
            _ => {}
        }
    }
    done.sort_by(rank);
    live.sort_by(rank);
    done.into_iter().next().or_else(|| live.into_iter().next()).ok_or_else(|| {
        crate::error::Error::InvalidInput("beam search produced no hypothesis".into())
    })
}

/// Best hypothesis over every sequence the search space admits within
/// `max_len` steps, under the beam's return rule: the best finished one,
/// else the best unfinished at `max_len`. Exponential; small vocabularies
/// only.
pub fn exhaustive_search<M: CausalLm + ?Sized>(
    model: &M,
    prompt: &[u32],
    max_len: usize,
    trie: Option<&SpanTrie>,
) -> Result<BeamHypothesis> {
    let mut best: Option<BeamHypothesis> = None;
    let better = |c: &BeamHypothesis, b: &BeamHypothesis| {
        if c.finished != b.finished {
            c.finished
        } else {
            rank(c, b) == Ordering::Less
        }
    };
    let mut frontier = vec![BeamHypothesis { tokens: vec![], log_prob: 0.0, trie_node: trie.map(|_| ROOT), finished: false }];
    for step in 0..max_len {
        let mut next = Vec::new();
        for h in &frontier {
            let mut ctx = prompt.to_vec();
            ctx.extend_from_slice(&h.tokens);
            let lp = model.last_log_probs(&ctx)?;
            let mut cands = Vec::new();
            expand(h, &lp, trie, &mut cands);
            for c in cands {
                if c.finished || step + 1 == max_len {
                    if best.as_ref().map_or(true, |b| better(&c, b)) {
                        best = Some(c);
                    }
                } else {
                    next.push(c);
                }
            }
        }
        frontier = next;
    }
    best.ok_or_else(|| crate::error::Error::InvalidInput("empty search space".into()))
}
