use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    /// Bidirectional understanding; never reads recurrence memory.
    Nlu,
    /// Left-to-right generation with recurrence memory.
    Nlg,
}

/// Boolean attention pattern of shape `query_len × (memory_len + query_len)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    pub paradigm: Paradigm,
    pub query_len: usize,
    pub memory_len: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn key_len(&self) -> usize {
        self.memory_len + self.query_len
    }

    pub fn allowed(&self, query: usize, key: usize) -> bool {
        self.allowed[query * self.key_len() + key]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allowed
    }

    /// Memory rows the forward pass actually reads; zero under NLU.
    pub fn effective_memory_len(&self) -> usize {
        match self.paradigm {
            Paradigm::Nlu => 0,
            Paradigm::Nlg => self.memory_len,
        }
    }

    /// The mask restricted to the columns the forward pass reads.
    pub fn effective(&self) -> Vec<bool> {
        let skip = self.memory_len - self.effective_memory_len();
        let k = self.key_len();
        (0..self.query_len).flat_map(|i| self.allowed[i * k + skip..(i + 1) * k].iter().copied()).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.allowed.chunks(self.key_len().max(1)).map(|r| r.iter().map(|&b| b as u8).collect()).collect()
    }
}

/// NLG: causal over the current block, full over memory. NLU: full over the
/// current block, memory columns all blocked.
pub fn make_mask(paradigm: Paradigm, query_len: usize, memory_len: usize) -> AttentionMask {
    let k = memory_len + query_len;
    let mut allowed = vec![false; query_len * k];
    for i in 0..query_len {
        for j in 0..k {
            allowed[i * k + j] = match paradigm {
                Paradigm::Nlg => j < memory_len || j - memory_len <= i,
                Paradigm::Nlu => j >= memory_len,
            };
        }
    }
    AttentionMask { paradigm, query_len, memory_len, allowed }
}
