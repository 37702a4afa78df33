//! Transformer-XL encoder blocks, recurrence memory and attention masks.

mod config;
mod mask;
mod memory;
mod stack;

pub use config::{ModelConfig, RecurrenceMode, StackConfig};
pub use mask::{make_mask, AttentionMask, Paradigm};
pub use memory::{update_memory, MemoryState};
pub use stack::{sinusoid, LayerParams, RelativePositions, Stack, StackOutput, LN_EPS};

use crate::error::Result;
use crate::numerics::{ForwardCtx, Graph, ParamStore, Var};

/// One segment through `stack` followed by the memory update. NLU segments
/// leave the memory untouched.
#[allow(clippy::too_many_arguments)]
pub fn forward_segment(
    g: &mut Graph,
    store: &ParamStore,
    ctx: &mut ForwardCtx,
    stack: &Stack,
    input: Var,
    memory: &MemoryState,
    paradigm: Paradigm,
    mode: RecurrenceMode,
    memory_len: usize,
) -> Result<(StackOutput, MemoryState)> {
    let q_len = g.dims(input).0;
    let mask = make_mask(paradigm, q_len, memory.len());
    let out = stack.forward(g, store, ctx, input, memory, &mask)?;
    let next = match paradigm {
        Paradigm::Nlu => memory.clone(),
        Paradigm::Nlg => {
            let states: Vec<Vec<f64>> = out.layer_states.iter().map(|&v| g.value(v).to_vec()).collect();
            update_memory(mode, memory, &states, q_len, memory_len)?
        }
    };
    Ok((out, next))
}
