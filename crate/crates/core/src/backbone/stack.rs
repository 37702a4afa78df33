//! Pre-norm Transformer-XL stack with relative-position attention.
//!
//! Attention score between query `i` and key `j` at relative distance `d`:
//! `(q_i + u)·k_j + (q_i + v)·(W_r r_d)`, scaled by `1/sqrt(head_dim)`,
//! where `r_d` is a sinusoidal encoding of `d` and `u`, `v` are learned
//! stack-wide biases.

use rand::Rng;

use super::config::StackConfig;
use super::mask::AttentionMask;
use super::memory::MemoryState;
use crate::error::{bail_shape, Result};
use crate::numerics::{ForwardCtx, Graph, ParamId, ParamStore, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub ln1: (ParamId, ParamId),
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wr: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2: (ParamId, ParamId),
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct Stack {
    pub cfg: StackConfig,
    pub layers: Vec<LayerParams>,
    pub pos_bias_u: ParamId,
    pub pos_bias_v: ParamId,
    pub ln_final: (ParamId, ParamId),
}

/// Result of one segment through a stack.
#[derive(Debug, Clone)]
pub struct StackOutput {
    /// Final-norm output of the top layer, `query_len × hidden`.
    pub hidden: Var,
    /// `[input, out_0, ..., out_{L-1}]`, each `query_len × hidden`.
    pub layer_states: Vec<Var>,
}

fn layer_norm_params(store: &mut ParamStore, name: &str, group: &str, width: usize) -> (ParamId, ParamId) {
    (
        store.add(format!("{name}.gamma"), group, Tensor::full(&[1, width], 1.0), false),
        store.add(format!("{name}.beta"), group, Tensor::zeros(&[1, width]), false),
    )
}

impl Stack {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        group: &str,
        cfg: StackConfig,
        ffn_mult: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let d = cfg.hidden;
        let f = d * ffn_mult;
        // residual projections shrink with depth
        let out_std = std / (2.0 * cfg.layers as f64).sqrt();
        let layers = (0..cfg.layers)
            .map(|l| {
                let p = format!("{prefix}.layer{l}");
                let mut w = |name: &str, r: usize, c: usize, s: f64| {
                    store.add(format!("{p}.{name}"), group, Tensor::randn(&[r, c], s, rng), true)
                };
                let wq = w("attn.wq", d, d, std);
                let wk = w("attn.wk", d, d, std);
                let wv = w("attn.wv", d, d, std);
                let wr = w("attn.wr", d, d, std);
                let wo = w("attn.wo", d, d, out_std);
                let w1 = w("ffn.w1", d, f, std);
                let w2 = w("ffn.w2", f, d, out_std);
                LayerParams {
                    ln1: layer_norm_params(store, &format!("{p}.ln1"), group, d),
                    wq,
                    wk,
                    wv,
                    wr,
                    wo,
                    bo: store.add(format!("{p}.attn.bo"), group, Tensor::zeros(&[1, d]), false),
                    ln2: layer_norm_params(store, &format!("{p}.ln2"), group, d),
                    w1,
                    b1: store.add(format!("{p}.ffn.b1"), group, Tensor::zeros(&[1, f]), false),
                    w2,
                    b2: store.add(format!("{p}.ffn.b2"), group, Tensor::zeros(&[1, d]), false),
                }
            })
            .collect();
        Self {
            cfg,
            layers,
            pos_bias_u: store.add(format!("{prefix}.pos_bias_u"), group, Tensor::zeros(&[1, d]), false),
            pos_bias_v: store.add(format!("{prefix}.pos_bias_v"), group, Tensor::zeros(&[1, d]), false),
            ln_final: layer_norm_params(store, &format!("{prefix}.ln_final"), group, d),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for l in &self.layers {
            ids.extend([
                l.ln1.0, l.ln1.1, l.wq, l.wk, l.wv, l.wr, l.wo, l.bo, l.ln2.0, l.ln2.1, l.w1, l.b1, l.w2, l.b2,
            ]);
        }
        ids.extend([self.pos_bias_u, self.pos_bias_v, self.ln_final.0, self.ln_final.1]);
        ids
    }

    /// Runs one segment. `input` is `query_len × hidden`; memory rows are
    /// read only when the mask's paradigm enables them.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        ctx: &mut ForwardCtx,
        input: Var,
        memory: &MemoryState,
        mask: &AttentionMask,
    ) -> Result<StackOutput> {
        let (q_len, width) = g.dims(input);
        if width != self.cfg.hidden {
            bail_shape!("stack width {} got input width {}", self.cfg.hidden, width);
        }
        if q_len != mask.query_len {
            bail_shape!("mask built for {} queries, input has {}", mask.query_len, q_len);
        }
        memory.check(self.cfg.layers, width)?;
        let mem_len = mask.effective_memory_len();
        if mem_len > 0 && mem_len != memory.len() {
            bail_shape!("mask expects {} memory rows, memory holds {}", mem_len, memory.len());
        }
        let allowed = mask.effective();
        let rel = RelativePositions::new(q_len, mem_len, width);

        let mut h = input;
        let mut states = vec![input];
        for (l, layer) in self.layers.iter().enumerate() {
            let mem = if mem_len > 0 { Some(g.constant_raw(mem_len, width, memory.layer(l).to_vec())) } else { None };
            h = self.layer_forward(g, store, ctx, layer, h, mem, &allowed, &rel)?;
            states.push(h);
        }
        let (gamma, beta) = (ctx.bind(g, store, self.ln_final.0), ctx.bind(g, store, self.ln_final.1));
        let hidden = g.layer_norm(h, gamma, beta, LN_EPS)?;
        Ok(StackOutput { hidden, layer_states: states })
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        ctx: &mut ForwardCtx,
        p: &LayerParams,
        h: Var,
        mem: Option<Var>,
        allowed: &[bool],
        rel: &RelativePositions,
    ) -> Result<Var> {
        let heads = self.cfg.heads;
        let dh = self.cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let bind = |g: &mut Graph, id| ctx.bind(g, store, id);

        let (g1, b1) = (bind(g, p.ln1.0), bind(g, p.ln1.1));
        let xq = g.layer_norm(h, g1, b1, LN_EPS)?;
        let xkv = match mem {
            Some(m) => {
                let mn = g.layer_norm(m, g1, b1, LN_EPS)?;
                g.concat_rows(&[mn, xq])?
            }
            None => xq,
        };
        let (wq, wk, wv, wr, wo, bo) = (bind(g, p.wq), bind(g, p.wk), bind(g, p.wv), bind(g, p.wr), bind(g, p.wo), bind(g, p.bo));
        let (u, v) = (bind(g, self.pos_bias_u), bind(g, self.pos_bias_v));
        let q = g.matmul(xq, wq)?;
        let k = g.matmul(xkv, wk)?;
        let val = g.matmul(xkv, wv)?;
        let r = g.constant_raw(rel.count, self.cfg.hidden, rel.encodings.clone());
        let pos = g.matmul(r, wr)?;
        let q_u = g.add_row(q, u)?;
        let q_v = g.add_row(q, v)?;

        let mut head_outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let s = hd * dh;
            let qu = g.slice_cols(q_u, s, dh)?;
            let qv = g.slice_cols(q_v, s, dh)?;
            let kh = g.slice_cols(k, s, dh)?;
            let vh = g.slice_cols(val, s, dh)?;
            let ph = g.slice_cols(pos, s, dh)?;
            let content = g.matmul_bt(qu, kh)?;
            let by_distance = g.matmul_bt(qv, ph)?;
            let position = g.gather_in_row(by_distance, rel.key_len, &rel.index)?;
            let scores = g.add(content, position)?;
            let scores = g.scale(scores, scale);
            let probs = g.masked_softmax(scores, allowed)?;
            head_outs.push(g.matmul(probs, vh)?);
        }
        let attn = if heads == 1 { head_outs[0] } else { g.concat_cols(&head_outs)? };
        let attn = g.matmul(attn, wo)?;
        let attn = g.add_row(attn, bo)?;
        let attn = ctx.dropout(g, attn)?;
        let h = g.add(h, attn)?;

        let bind = |g: &mut Graph, id| ctx.bind(g, store, id);
        let (g2, b2n) = (bind(g, p.ln2.0), bind(g, p.ln2.1));
        let (w1, fb1, w2, fb2) = (bind(g, p.w1), bind(g, p.b1), bind(g, p.w2), bind(g, p.b2));
        let x = g.layer_norm(h, g2, b2n, LN_EPS)?;
        let x = g.matmul(x, w1)?;
        let x = g.add_row(x, fb1)?;
        let x = g.gelu(x);
        let x = g.matmul(x, w2)?;
        let x = g.add_row(x, fb2)?;
        let x = ctx.dropout(g, x)?;
        g.add(h, x)
    }
}

/// Sinusoidal encodings for every query-key distance in a segment, plus the
/// per-(query, key) index into them.
#[derive(Debug, Clone)]
pub struct RelativePositions {
    pub count: usize,
    pub key_len: usize,
    pub encodings: Vec<f64>,
    pub index: Vec<usize>,
}

impl RelativePositions {
    /// Query `i` sits at absolute position `mem_len + i`, key `j` at `j`;
    /// distances run from `-(q_len - 1)` to `mem_len + q_len - 1`.
    pub fn new(q_len: usize, mem_len: usize, width: usize) -> Self {
        let key_len = mem_len + q_len;
        let count = mem_len + 2 * q_len - 1;
        let offset = q_len as i64 - 1;
        let mut encodings = Vec::with_capacity(count * width);
        for t in 0..count {
            let d = t as i64 - offset;
            encodings.extend(sinusoid(d as f64, width));
        }
        let mut index = Vec::with_capacity(q_len * key_len);
        for i in 0..q_len {
            for j in 0..key_len {
                let d = (mem_len + i) as i64 - j as i64;
                index.push((d + offset) as usize);
            }
        }
        Self { count, key_len, encodings, index }
    }
}

pub fn sinusoid(pos: f64, width: usize) -> Vec<f64> {
    (0..width)
        .map(|k| {
            let freq = 1.0 / 10_000f64.powf((k / 2 * 2) as f64 / width as f64);
            if k % 2 == 0 {
                (pos * freq).sin()
            } else {
                (pos * freq).cos()
            }
        })
        .collect()
}
