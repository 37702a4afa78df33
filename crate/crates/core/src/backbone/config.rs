use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
}

impl StackConfig {
    pub const fn new(layers: usize, hidden: usize, heads: usize) -> Self {
        Self { layers, hidden, heads }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 {
            return Err(Error::Config(format!("{what}: layers, hidden and heads must be positive")));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "{what}: hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

/// Which cached layer feeds layer `l` in the next segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecurrenceMode {
    /// Layer `l` attends to the cached output of layer `l - 1`.
    ShiftDown,
    /// Layer `l` attends to the cached output of layer `l` itself.
    SameLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub universal: StackConfig,
    pub task_head: StackConfig,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub memory_len: usize,
    pub recurrence: RecurrenceMode,
    pub dropout: f64,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    /// Use one task-specific stack for both paradigms instead of two.
    #[serde(default)]
    pub shared_heads: bool,
    /// Class count of the relation-probe head.
    #[serde(default = "default_relations")]
    pub relation_classes: usize,
    /// Upper bound `m` on sentence-reordering segment count.
    #[serde(default = "default_reorder_max")]
    pub reorder_max_segments: usize,
}

fn default_ffn_mult() -> usize {
    4
}

fn default_init_std() -> f64 {
    0.02
}

fn default_relations() -> usize {
    8
}

fn default_reorder_max() -> usize {
    3
}

impl ModelConfig {
    /// Reference full-scale dimensions; documentation only, far beyond desk scale.
    pub fn reference_scale(vocab_size: usize) -> Self {
        Self {
            universal: StackConfig::new(48, 4096, 64),
            task_head: StackConfig::new(12, 768, 12),
            vocab_size,
            max_seq_len: 512,
            memory_len: 128,
            recurrence: RecurrenceMode::SameLayer,
            dropout: 0.1,
            ffn_mult: 4,
            init_std: 0.02,
            shared_heads: false,
            relation_classes: 8,
            reorder_max_segments: 3,
        }
    }

    /// Base trunk with the 3-layer, 256-wide, 4-head task stacks used in the
    /// task-branch ablation.
    pub fn ablation_base(vocab_size: usize) -> Self {
        Self {
            universal: StackConfig::new(12, 768, 12),
            task_head: StackConfig::new(3, 256, 4),
            ..Self::reference_scale(vocab_size)
        }
    }

    /// Small preset that trains on one CPU core in minutes.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            universal: StackConfig::new(4, 128, 4),
            task_head: StackConfig::new(2, 64, 2),
            vocab_size,
            max_seq_len: 64,
            memory_len: 16,
            recurrence: RecurrenceMode::SameLayer,
            dropout: 0.0,
            ffn_mult: 4,
            init_std: 0.1,
            shared_heads: false,
            relation_classes: 8,
            reorder_max_segments: 3,
        }
    }

    /// Minimal dimensions for unit tests and gradient checks.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            universal: StackConfig::new(2, 8, 2),
            task_head: StackConfig::new(1, 4, 2),
            vocab_size,
            max_seq_len: 16,
            memory_len: 4,
            recurrence: RecurrenceMode::SameLayer,
            dropout: 0.0,
            ffn_mult: 2,
            init_std: 0.3,
            shared_heads: false,
            relation_classes: 3,
            reorder_max_segments: 3,
        }
    }

    /// Memory length scaled from the 512:128 sequence-to-memory ratio.
    pub fn memory_for_seq_len(seq_len: usize) -> usize {
        seq_len / 4
    }

    pub fn validate(&self) -> Result<()> {
        self.universal.validate("universal")?;
        self.task_head.validate("task_head")?;
        if self.vocab_size == 0 || self.max_seq_len == 0 {
            return Err(Error::Config("vocab_size and max_seq_len must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.ffn_mult == 0 || self.relation_classes == 0 || self.reorder_max_segments == 0 {
            return Err(Error::Config("ffn_mult, relation_classes, reorder_max_segments must be positive".into()));
        }
        Ok(())
    }
}
