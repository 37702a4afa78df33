//! Reproducible runs: configuration, preprocessing, training, checkpoints
//! and evaluation, with every artifact under the run's output directory.

mod checkpoint;
mod commands;
mod config;
mod preprocess;
pub mod synth;
mod trainer;

pub use checkpoint::{hex, Checkpoint, CheckpointHeader, CursorState, SavedParam, MAGIC, VERSION};
pub use commands::{cmd_eval, cmd_finetune, cmd_inspect_checkpoint, cmd_pretrain, schedule_dump, TrainSummary};
pub use config::{DataConfig, EvalConfig, RunConfig, Stage, TaskMix, TrainConfig};
pub use preprocess::{cmd_preprocess, read_archive, PreprocessStats};
pub use trainer::{LogEntry, StepInfo, Trainer};

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use md5::{Digest, Md5};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Independent stream seed for `(seed, tag, index)`.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h = Md5::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 16 bytes"))
}

/// Parsed lines of a JSONL file plus the count of lines that failed to
/// parse. Blank lines are ignored.
pub struct JsonlRead<T> {
    pub items: Vec<T>,
    pub lines: usize,
    pub malformed: usize,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<JsonlRead<T>> {
    let f = std::fs::File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut out = JsonlRead { items: Vec::new(), lines: 0, malformed: 0 };
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        out.lines += 1;
        match serde_json::from_str(&line) {
            Ok(v) => out.items.push(v),
            Err(e) => {
                log::warn!("{}:{}: skipped malformed record: {e}", path.display(), n + 1);
                out.malformed += 1;
            }
        }
    }
    Ok(out)
}

/// Like [`read_jsonl`] but any malformed line is an error.
pub fn read_jsonl_strict<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let r = read_jsonl(path)?;
    if r.malformed > 0 {
        return Err(Error::Data(format!("{}: {} malformed lines", path.display(), r.malformed)));
    }
    Ok(r.items)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for it in items {
        writeln!(w, "{}", serde_json::to_string(it)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn md5_hex(bytes: &[u8]) -> String {
    hex(&Md5::digest(bytes))
}
