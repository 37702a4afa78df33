//! Shared universal trunk with paradigm-specific task stacks.

mod model;

pub use model::{
    reorder_classes, Linear, ModelMemory, NlgOutput, TaskHead, UnifiedModel, DISTANCE_CLASSES, GROUPS, GROUP_NLG,
    GROUP_NLU, GROUP_UNIVERSAL,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ParamId;

/// Which parameter groups an optimizer step may touch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineTuneMode {
    pub update_universal: bool,
    pub update_nlu_head: bool,
    pub update_nlg_head: bool,
}

impl FineTuneMode {
    pub const ALL: Self = Self { update_universal: true, update_nlu_head: true, update_nlg_head: true };

    /// Parses names such as `universal`, `nlu-head`, `nlg-head`, `all`.
    pub fn from_flags<S: AsRef<str>>(flags: &[S]) -> Result<Self> {
        let mut mode = Self::default();
        for f in flags {
            match f.as_ref() {
                "universal" | "update-universal" => mode.update_universal = true,
                "nlu-head" | "update-nlu-head" => mode.update_nlu_head = true,
                "nlg-head" | "update-nlg-head" => mode.update_nlg_head = true,
                "all" => mode = Self::ALL,
                other => return Err(Error::Config(format!("unknown fine-tune flag `{other}`"))),
            }
        }
        Ok(mode)
    }

    pub fn is_empty(&self) -> bool {
        !(self.update_universal || self.update_nlu_head || self.update_nlg_head)
    }

    pub fn groups(&self) -> Vec<&'static str> {
        [(self.update_universal, GROUP_UNIVERSAL), (self.update_nlu_head, GROUP_NLU), (self.update_nlg_head, GROUP_NLG)]
            .into_iter()
            .filter_map(|(on, g)| on.then_some(g))
            .collect()
    }
}

/// Union of the flagged groups, in store order.
pub fn trainable_parameters(model: &UnifiedModel, mode: FineTuneMode) -> Result<Vec<ParamId>> {
    if mode.is_empty() {
        return Err(Error::Config("fine-tune mode needs at least one group".into()));
    }
    let groups = mode.groups();
    Ok(model.params.iter().filter(|(_, p)| groups.contains(&p.group.as_str())).map(|(id, _)| id).collect())
}
