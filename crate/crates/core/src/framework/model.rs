use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{forward_segment, make_mask, MemoryState, ModelConfig, Paradigm, Stack, StackConfig};
use crate::error::{bail_input, bail_shape, Result};
use crate::numerics::{log_softmax, ForwardCtx, Graph, ParamId, ParamStore, Tensor, Var};

pub const GROUP_UNIVERSAL: &str = "universal";
pub const GROUP_NLU: &str = "nlu-head";
pub const GROUP_NLG: &str = "nlg-head";
pub const GROUPS: [&str; 3] = [GROUP_UNIVERSAL, GROUP_NLU, GROUP_NLG];

/// Linear map `x · w + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    fn init(store: &mut ParamStore, name: &str, group: &str, fan_in: usize, fan_out: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: store.add(format!("{name}.w"), group, Tensor::randn(&[fan_in, fan_out], std, rng), true),
            b: store.add(format!("{name}.b"), group, Tensor::zeros(&[1, fan_out]), false),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ctx: &ForwardCtx, x: Var) -> Result<Var> {
        let w = ctx.bind(g, store, self.w);
        let b = ctx.bind(g, store, self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

/// A task-specific stack with the width bridges on either side of it.
#[derive(Debug, Clone)]
pub struct TaskHead {
    /// Universal width → head width.
    pub bridge_in: Linear,
    pub stack: Stack,
    /// Head width → universal width, feeding the tied output projection.
    pub bridge_out: Linear,
}

impl TaskHead {
    fn init(store: &mut ParamStore, name: &str, group: &str, cfg: &ModelConfig, head: StackConfig, rng: &mut ChaCha8Rng) -> Self {
        let (du, dh) = (cfg.universal.hidden, head.hidden);
        Self {
            bridge_in: Linear::init(store, &format!("{name}.bridge_in"), group, du, dh, cfg.init_std, rng),
            stack: Stack::init(store, &format!("{name}.stack"), group, head, cfg.ffn_mult, cfg.init_std, rng),
            bridge_out: Linear::init(store, &format!("{name}.bridge_out"), group, dh, du, cfg.init_std, rng),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.bridge_in.ids().to_vec();
        ids.extend(self.stack.param_ids());
        ids.extend(self.bridge_out.ids());
        ids
    }
}

/// Recurrence state for the generation path: one cache per stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMemory {
    pub universal: MemoryState,
    pub head: MemoryState,
}

/// Output of [`UnifiedModel::decode_nlg`].
#[derive(Debug, Clone)]
pub struct NlgOutput {
    pub logits: Var,
    pub hidden: Var,
    pub memory: ModelMemory,
    /// Per-layer states of the NLG task stack (input first).
    pub head_states: Vec<Var>,
    pub universal_states: Vec<Var>,
}

/// Shared universal trunk with NLU and NLG task stacks. The token embedding
/// doubles as the output projection and belongs to the universal group.
#[derive(Debug, Clone)]
pub struct UnifiedModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub embedding: ParamId,
    pub universal: Stack,
    pub nlu: TaskHead,
    /// Same ids as `nlu` when the config shares task stacks.
    pub nlg: TaskHead,
    pub reorder_cls: Linear,
    pub distance_cls: Linear,
    pub relation_cls: Linear,
}

pub const DISTANCE_CLASSES: usize = 3;

/// Σ_{j=1..m} j!
pub fn reorder_classes(m: usize) -> usize {
    (1..=m).scan(1usize, |f, j| {
        *f *= j;
        Some(*f)
    })
    .sum()
}

impl UnifiedModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let du = cfg.universal.hidden;
        let embedding = store.add("embedding", GROUP_UNIVERSAL, Tensor::randn(&[cfg.vocab_size, du], cfg.init_std, &mut rng), true);
        let universal = Stack::init(&mut store, "universal", GROUP_UNIVERSAL, cfg.universal, cfg.ffn_mult, cfg.init_std, &mut rng);
        let (nlu, nlg) = if cfg.shared_heads {
            // one stack serves both paradigms; doubled depth keeps the
            // parameter count in line with two separate stacks
            let shared = StackConfig { layers: cfg.task_head.layers * 2, ..cfg.task_head };
            let head = TaskHead::init(&mut store, "shared_head", GROUP_NLU, &cfg, shared, &mut rng);
            (head.clone(), head)
        } else {
            let nlu = TaskHead::init(&mut store, "nlu_head", GROUP_NLU, &cfg, cfg.task_head, &mut rng);
            let nlg = TaskHead::init(&mut store, "nlg_head", GROUP_NLG, &cfg, cfg.task_head, &mut rng);
            (nlu, nlg)
        };
        let dh = cfg.task_head.hidden;
        let reorder_cls = Linear::init(&mut store, "nlu_head.reorder_cls", GROUP_NLU, dh, reorder_classes(cfg.reorder_max_segments), cfg.init_std, &mut rng);
        let distance_cls = Linear::init(&mut store, "nlu_head.distance_cls", GROUP_NLU, dh, DISTANCE_CLASSES, cfg.init_std, &mut rng);
        let relation_cls = Linear::init(&mut store, "nlu_head.relation_cls", GROUP_NLU, dh, cfg.relation_classes, cfg.init_std, &mut rng);
        Ok(Self { cfg, params: store, embedding, universal, nlu, nlg, reorder_cls, distance_cls, relation_cls })
    }

    pub fn empty_memory(&self) -> ModelMemory {
        ModelMemory {
            universal: MemoryState::empty(self.universal.cfg.layers, self.universal.cfg.hidden),
            head: MemoryState::empty(self.nlg.stack.cfg.layers, self.nlg.stack.cfg.hidden),
        }
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            bail_input!("empty token sequence");
        }
        if tokens.len() > self.cfg.max_seq_len {
            bail_input!("sequence of {} exceeds max length {}", tokens.len(), self.cfg.max_seq_len);
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            bail_input!("token id {} outside vocabulary of {}", t, self.cfg.vocab_size);
        }
        Ok(())
    }

    fn embed(&self, g: &mut Graph, ctx: &mut ForwardCtx, tokens: &[u32]) -> Result<Var> {
        let e = ctx.bind(g, &self.params, self.embedding);
        let idx: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let x = g.gather_rows(e, &idx)?;
        ctx.dropout(g, x)
    }

    /// Universal stack (bidirectional, no memory) then the NLU stack.
    /// Returns `len × head_hidden`.
    pub fn encode_nlu(&self, g: &mut Graph, ctx: &mut ForwardCtx, tokens: &[u32]) -> Result<Var> {
        self.check_tokens(tokens)?;
        let x = self.embed(g, ctx, tokens)?;
        let mask = make_mask(Paradigm::Nlu, tokens.len(), 0);
        let no_mem = MemoryState::empty(self.universal.cfg.layers, self.universal.cfg.hidden);
        let u = self.universal.forward(g, &self.params, ctx, x, &no_mem, &mask)?;
        let h = self.nlu.bridge_in.forward(g, &self.params, ctx, u.hidden)?;
        let head_mem = MemoryState::empty(self.nlu.stack.cfg.layers, self.nlu.stack.cfg.hidden);
        let out = self.nlu.stack.forward(g, &self.params, ctx, h, &head_mem, &mask)?;
        Ok(out.hidden)
    }

    /// Universal stack (causal, with memory) then the NLG stack; returns
    /// next-token logits per position and the updated memory.
    pub fn decode_nlg(&self, g: &mut Graph, ctx: &mut ForwardCtx, tokens: &[u32], memory: &ModelMemory) -> Result<NlgOutput> {
        self.check_tokens(tokens)?;
        memory.universal.check(self.universal.cfg.layers, self.universal.cfg.hidden)?;
        memory.head.check(self.nlg.stack.cfg.layers, self.nlg.stack.cfg.hidden)?;
        let (mode, mem_len) = (self.cfg.recurrence, self.cfg.memory_len);
        let x = self.embed(g, ctx, tokens)?;
        let (u, umem) = forward_segment(g, &self.params, ctx, &self.universal, x, &memory.universal, Paradigm::Nlg, mode, mem_len)?;
        let h = self.nlg.bridge_in.forward(g, &self.params, ctx, u.hidden)?;
        let (out, hmem) = forward_segment(g, &self.params, ctx, &self.nlg.stack, h, &memory.head, Paradigm::Nlg, mode, mem_len)?;
        let logits = self.vocab_logits(g, ctx, &self.nlg, out.hidden)?;
        Ok(NlgOutput {
            logits,
            hidden: out.hidden,
            memory: ModelMemory { universal: umem, head: hmem },
            head_states: out.layer_states,
            universal_states: u.layer_states,
        })
    }

    /// Head hidden rows → bridge → tied embedding transpose.
    pub fn vocab_logits(&self, g: &mut Graph, ctx: &mut ForwardCtx, head: &TaskHead, hidden: Var) -> Result<Var> {
        let up = head.bridge_out.forward(g, &self.params, ctx, hidden)?;
        let e = ctx.bind(g, &self.params, self.embedding);
        g.matmul_bt(up, e)
    }

    /// Vocabulary logits at selected rows of an NLU encoding.
    pub fn mlm_logits(&self, g: &mut Graph, ctx: &mut ForwardCtx, hidden: Var, positions: &[usize]) -> Result<Var> {
        let picked = g.gather_rows(hidden, positions)?;
        self.vocab_logits(g, ctx, &self.nlu, picked)
    }

    /// Sequence classification from the first ([CLS]) position.
    pub fn cls_logits(&self, g: &mut Graph, ctx: &mut ForwardCtx, hidden: Var, head: Linear) -> Result<Var> {
        let first = g.gather_rows(hidden, &[0])?;
        head.forward(g, &self.params, ctx, first)
    }

    /// Relation logits from the summed representations of the four entity
    /// marker positions.
    pub fn relation_logits(&self, g: &mut Graph, ctx: &mut ForwardCtx, hidden: Var, markers: [usize; 4]) -> Result<Var> {
        let rows = g.gather_rows(hidden, &markers)?;
        let summed = g.sum_rows(rows);
        self.relation_cls.forward(g, &self.params, ctx, summed)
    }

    /// Log-distributions of the next token after each position of
    /// `context`, run in max-length segments with carried memory.
    pub fn next_token_log_probs(&self, context: &[u32]) -> Result<Vec<Vec<f64>>> {
        if context.is_empty() {
            bail_input!("empty context");
        }
        let mut memory = self.empty_memory();
        let mut rows = Vec::with_capacity(context.len());
        for chunk in context.chunks(self.cfg.max_seq_len) {
            let mut g = Graph::new();
            let mut ctx = ForwardCtx::eval();
            let out = self.decode_nlg(&mut g, &mut ctx, chunk, &memory)?;
            let v = self.cfg.vocab_size;
            let logits = g.value(out.logits);
            if logits.len() != chunk.len() * v {
                bail_shape!("logit rows mismatch");
            }
            rows.extend(logits.chunks(v).map(log_softmax));
            memory = out.memory;
        }
        Ok(rows)
    }

    pub fn group_param_ids(&self, group: &str) -> Vec<ParamId> {
        self.params.group_ids(group)
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn group_param_count(&self, group: &str) -> usize {
        self.group_param_ids(group).iter().map(|&id| self.params.get(id).tensor.numel()).sum()
    }
}
