use serde::{Deserialize, Serialize};

use crate::datapipe::special;
use crate::error::{bail_input, Result};

/// Consecutive non-overlapping chunks of at most `seq_len` tokens.
pub fn segment_document_lm(tokens: &[u32], seq_len: usize) -> Result<Vec<Vec<u32>>> {
    if seq_len < 2 {
        bail_input!("segment length {} below 2", seq_len);
    }
    Ok(tokens.chunks(seq_len).map(<[u32]>::to_vec).collect())
}

/// Next-token prediction over one document: `input = [BOS] + doc`,
/// `targets = doc + [EOS]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocLmSample {
    pub doc_id: String,
    pub input: Vec<u32>,
    pub targets: Vec<u32>,
}

impl DocLmSample {
    pub fn new(doc_id: impl Into<String>, doc: &[u32]) -> Result<Self> {
        if doc.is_empty() {
            bail_input!("empty document");
        }
        let mut input = vec![special::BOS];
        input.extend_from_slice(doc);
        let mut targets = doc.to_vec();
        targets.push(special::EOS);
        Ok(Self { doc_id: doc_id.into(), input, targets })
    }

    /// Aligned (input, target) segments for recurrent training.
    pub fn segments(&self, seq_len: usize) -> Result<Vec<(Vec<u32>, Vec<u32>)>> {
        let ins = segment_document_lm(&self.input, seq_len)?;
        let outs = segment_document_lm(&self.targets, seq_len)?;
        Ok(ins.into_iter().zip(outs).collect())
    }
}
