use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::checkpoint::Checkpoint;
use super::preprocess::{load_tokenizer, read_archive};
use super::trainer::{LogEntry, Trainer};
use super::{read_jsonl_strict, RunConfig};
use crate::error::{Error, Result};
use crate::framework::{trainable_parameters, FineTuneMode};
use crate::schedule::{factors_at, Factors};
use crate::zeroshot::{run_eval, EvalItem, EvalReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub final_checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub last_probe: Option<std::collections::BTreeMap<crate::tasks::TaskId, f64>>,
}

fn ensure_writable(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("checkpoint dir {}: {e}", dir.display()))))?;
    let probe = dir.join(".write-test");
    std::fs::write(&probe, b"")
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("checkpoint dir {} not writable: {e}", dir.display()))))?;
    std::fs::remove_file(probe)?;
    Ok(())
}

/// Lines of an existing log up to and including `step`, byte for byte.
fn log_prefix(path: &Path, step: u64) -> Result<Vec<String>> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in std::fs::read_to_string(path)?.lines() {
        match serde_json::from_str::<LogEntry>(line) {
            Ok(e) if e.step <= step => out.push(line.to_string()),
            Ok(_) => {}
            Err(e) => log::warn!("skipping malformed log line: {e}"),
        }
    }
    Ok(out)
}

fn train_loop(mut trainer: Trainer, dir: &Path) -> Result<TrainSummary> {
    let ckpt_dir = dir.join("checkpoints");
    ensure_writable(&ckpt_dir)?;
    let log_path = dir.join("loss_log.jsonl");
    let prefix = if trainer.step() > 0 { log_prefix(&log_path, trainer.step())? } else { Vec::new() };
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    for line in &prefix {
        writeln!(log, "{line}")?;
    }
    let cfg = trainer.config().clone();
    let mut last_probe = None;
    if trainer.step() == 0 {
        let probe = trainer.probe_losses()?;
        writeln!(log, "{}", serde_json::to_string(&LogEntry { step: 0, train: None, probe: Some(probe.clone()) })?)?;
        last_probe = Some(probe);
    }
    while trainer.step() < cfg.train.steps {
        let info = trainer.train_step()?;
        let step = trainer.step();
        let probe = if step % cfg.train.log_every == 0 { Some(trainer.probe_losses()?) } else { None };
        if probe.is_some() {
            last_probe = probe.clone();
            log::info!("step {step}: {} loss {:.4}", info.task, info.loss);
        }
        writeln!(log, "{}", serde_json::to_string(&LogEntry { step, train: Some(info), probe })?)?;
        if step % cfg.train.checkpoint_every == 0 || step == cfg.train.steps {
            log.flush()?;
            trainer.checkpoint().save(&ckpt_dir.join(format!("step-{step:06}.ckpt")))?;
        }
    }
    log.flush()?;
    let final_checkpoint = dir.join("final.ckpt");
    trainer.checkpoint().save(&final_checkpoint)?;
    Ok(TrainSummary { steps: trainer.step(), final_checkpoint, loss_log: log_path, last_probe })
}

/// Multi-task pre-training from the preprocessed archive, optionally
/// resuming from a checkpoint of the same run.
pub fn cmd_pretrain(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    ensure_writable(&cfg.output_dir.join("checkpoints"))?;
    let archive = read_archive(&cfg.archive_path())?;
    let (_, md5) = load_tokenizer(cfg)?;
    let trainer = match resume {
        Some(p) => Trainer::resume(cfg.clone(), &Checkpoint::load(p)?, archive, md5)?,
        None => Trainer::new(cfg.clone(), archive, md5)?,
    };
    train_loop(trainer, &cfg.output_dir)
}

/// Trains the groups named by `flags` (or `train.fine_tune`) starting from
/// a pre-trained checkpoint; artifacts go to `<output>/finetune`.
pub fn cmd_finetune(cfg: &RunConfig, from: &Path, flags: Option<&[String]>) -> Result<TrainSummary> {
    let dir = cfg.output_dir.join("finetune");
    ensure_writable(&dir.join("checkpoints"))?;
    let mode = FineTuneMode::from_flags(flags.unwrap_or(&cfg.train.fine_tune))?;
    let ckpt = Checkpoint::load(from)?;
    let (_, md5) = load_tokenizer(cfg)?;
    if ckpt.header.tokenizer_md5 != md5 {
        return Err(Error::Data("checkpoint was trained with a different tokenizer".into()));
    }
    let model = ckpt.restore_model()?;
    let trainable = trainable_parameters(&model, mode)?;
    let archive = read_archive(&cfg.archive_path())?;
    let trainer = Trainer::with_model(cfg.clone(), model, archive, md5, trainable)?;
    train_loop(trainer, &dir)
}

/// Zero-shot evaluation of a checkpoint on a JSONL item file; the report
/// is written to `<output>/eval/<file stem>.metrics.json`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, items_path: &Path) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (tok, md5) = load_tokenizer(cfg)?;
    if ckpt.header.tokenizer_md5 != md5 || tok.vocab_size() > ckpt.header.model.vocab_size {
        return Err(Error::Data(format!(
            "vocabulary mismatch: checkpoint vocab {} (tokenizer {}), current tokenizer {} ({md5})",
            ckpt.header.model.vocab_size,
            ckpt.header.tokenizer_md5,
            tok.vocab_size()
        )));
    }
    let model = ckpt.restore_model()?;
    let items: Vec<EvalItem> = read_jsonl_strict(items_path)?;
    let report = run_eval(&model, &tok, &items, cfg.eval.beam_width, cfg.eval.scope)?;
    let out = cfg.output_dir.join("eval");
    std::fs::create_dir_all(&out)?;
    let stem = items_path.file_stem().map_or_else(|| "items".into(), |s| s.to_string_lossy().into_owned());
    std::fs::write(out.join(format!("{stem}.metrics.json")), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Factors at every `every`-th step through the configured run length.
pub fn schedule_dump(cfg: &RunConfig, every: u64) -> Vec<(u64, Factors)> {
    let every = every.max(1);
    let mut steps: Vec<u64> = (0..=cfg.train.steps).step_by(every as usize).collect();
    if steps.last() != Some(&cfg.train.steps) {
        steps.push(cfg.train.steps);
    }
    steps.into_iter().map(|s| (s, factors_at(s, &cfg.schedule, &cfg.optimizer))).collect()
}

/// Header plus per-group parameter counts and value digests.
pub fn cmd_inspect_checkpoint(path: &Path) -> Result<Value> {
    let ck = Checkpoint::load(path)?;
    let groups: serde_json::Map<String, Value> = ck
        .group_summary()
        .into_iter()
        .map(|(g, (n, md5))| (g, json!({ "parameters": n, "md5": md5 })))
        .collect();
    Ok(json!({ "header": ck.header, "groups": groups }))
}
