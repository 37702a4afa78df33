use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::ModelConfig;
use crate::datapipe::{DatasetSpec, PipelineConfig};
use crate::error::{Error, Result};
use crate::numerics::AdamHyper;
use crate::schedule::ProgressiveSchedule;
use crate::tasks::{SampleConfig, TaskId};
use crate::zeroshot::{ScoreScope, DEFAULT_BEAM_WIDTH};

const MIX_TOLERANCE: f64 = 1e-9;

/// Everything a run needs; relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: AdamHyper,
    pub schedule: ProgressiveSchedule,
    pub data: DataConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub datasets: Vec<DatasetSpec>,
    /// JSONL of `{head, relation, tail}` triples.
    #[serde(default)]
    pub knowledge: Option<PathBuf>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    pub samples: SampleConfig,
    /// Malformed input lines tolerated, as a fraction of all lines read.
    #[serde(default = "default_max_bad")]
    pub max_malformed_fraction: f64,
}

fn default_max_bad() -> f64 {
    0.01
}

/// A task mix taking effect from `start_step` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub start_step: u64,
    pub task_mix: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    /// Samples per forward/backward pass; larger batches accumulate.
    pub device_batch: usize,
    pub log_every: u64,
    pub checkpoint_every: u64,
    /// Fixed samples per task whose loss is logged at every log point.
    pub probe_size: usize,
    /// Mix from step 0; later `stages` replace it.
    pub task_mix: BTreeMap<String, f64>,
    #[serde(default)]
    pub stages: Vec<Stage>,
    /// Groups updated by `finetune`: `universal`, `nlu-head`, `nlg-head`, `all`.
    #[serde(default = "default_fine_tune")]
    pub fine_tune: Vec<String>,
}

fn default_fine_tune() -> Vec<String> {
    vec!["all".into()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_beam")]
    pub beam_width: usize,
    #[serde(default)]
    pub scope: ScoreScope,
}

fn default_beam() -> usize {
    DEFAULT_BEAM_WIDTH
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { beam_width: DEFAULT_BEAM_WIDTH, scope: ScoreScope::default() }
    }
}

/// Parsed and checked task mix, in task order.
pub type TaskMix = Vec<(TaskId, f64)>;

fn parse_mix(raw: &BTreeMap<String, f64>, what: &str) -> Result<TaskMix> {
    let mut mix = Vec::with_capacity(raw.len());
    for (name, &w) in raw {
        let task = TaskId::parse(name).map_err(|_| Error::Config(format!("{what}: unknown task `{name}`")))?;
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::Config(format!("{what}: weight of {name} must be positive, got {w}")));
        }
        mix.push((task, w));
    }
    if mix.is_empty() {
        return Err(Error::Config(format!("{what}: empty task mix")));
    }
    let total: f64 = mix.iter().map(|m| m.1).sum();
    if (total - 1.0).abs() > MIX_TOLERANCE {
        return Err(Error::Config(format!("{what}: weights sum to {total}, not 1")));
    }
    mix.sort_by_key(|m| m.0);
    Ok(mix)
}

impl RunConfig {
    /// Reads, resolves and validates a TOML config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        self.data.datasets.iter_mut().for_each(|d| fix(&mut d.path));
        if let Some(k) = &mut self.data.knowledge {
            fix(k);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::InvalidInput(m) => Error::Config(m),
            other => other,
        };
        self.model.validate()?;
        self.optimizer.validate().map_err(cfg_err)?;
        self.schedule.validate()?;
        if self.optimizer.warmup_steps != self.schedule.warmup_steps {
            return Err(Error::Config(format!(
                "optimizer warmup {} differs from schedule warmup {}",
                self.optimizer.warmup_steps, self.schedule.warmup_steps
            )));
        }
        if self.schedule.seq_len.end > self.model.max_seq_len {
            return Err(Error::Config(format!(
                "scheduled sequence length {} exceeds model max {}",
                self.schedule.seq_len.end, self.model.max_seq_len
            )));
        }
        if self.model.dropout != self.schedule.dropout.end {
            return Err(Error::Config("model.dropout must equal the schedule's final dropout".into()));
        }
        if self.data.samples.reorder_max_segments != self.model.reorder_max_segments {
            return Err(Error::Config("samples.reorder_max_segments must equal model.reorder_max_segments".into()));
        }
        if !(0.0..=1.0).contains(&self.data.max_malformed_fraction) {
            return Err(Error::Config("max_malformed_fraction must lie in [0, 1]".into()));
        }
        let t = &self.train;
        if t.device_batch == 0 || t.log_every == 0 || t.checkpoint_every == 0 {
            return Err(Error::Config("device_batch, log_every and checkpoint_every must be positive".into()));
        }
        parse_mix(&t.task_mix, "train.task_mix")?;
        let mut last = 0;
        for (i, s) in t.stages.iter().enumerate() {
            if s.start_step <= last {
                return Err(Error::Config(format!("stage {i} must start after step {last}")));
            }
            last = s.start_step;
            parse_mix(&s.task_mix, &format!("train.stages[{i}]"))?;
        }
        if self.eval.beam_width == 0 {
            return Err(Error::Config("eval.beam_width must be positive".into()));
        }
        Ok(())
    }

    /// The mix in force at `step`.
    pub fn mix_at(&self, step: u64) -> Result<TaskMix> {
        match self.train.stages.iter().rev().find(|s| s.start_step <= step) {
            Some(s) => parse_mix(&s.task_mix, "stage"),
            None => parse_mix(&self.train.task_mix, "train.task_mix"),
        }
    }

    /// Every task any stage trains.
    pub fn all_tasks(&self) -> Result<Vec<TaskId>> {
        let mut tasks: Vec<TaskId> = parse_mix(&self.train.task_mix, "train.task_mix")?.into_iter().map(|m| m.0).collect();
        for s in &self.train.stages {
            tasks.extend(parse_mix(&s.task_mix, "stage")?.into_iter().map(|m| m.0));
        }
        tasks.sort();
        tasks.dedup();
        Ok(tasks)
    }

    pub fn archive_path(&self) -> PathBuf {
        self.output_dir.join("archive.jsonl")
    }

    pub fn tokenizer_path(&self) -> PathBuf {
        self.output_dir.join("tokenizer.json")
    }

    pub fn stats_path(&self) -> PathBuf {
        self.output_dir.join("preprocess_stats.json")
    }

    /// Config for a desk-scale run on the given dataset files.
    pub fn desk(output_dir: PathBuf, datasets: Vec<DatasetSpec>, knowledge: Option<PathBuf>, vocab_size: usize) -> Self {
        let schedule = ProgressiveSchedule::desk();
        let model = ModelConfig::desk(vocab_size);
        let steps = 500;
        let optimizer = AdamHyper {
            lr_peak: schedule.lr.end,
            warmup_steps: schedule.warmup_steps,
            total_steps: steps,
            ..AdamHyper::default()
        };
        let share = 1.0 / TaskId::PRETRAIN.len() as f64;
        Self {
            seed: 0,
            output_dir,
            data: DataConfig {
                datasets,
                knowledge,
                pipeline: PipelineConfig::default(),
                samples: SampleConfig::new(model.max_seq_len),
                max_malformed_fraction: default_max_bad(),
            },
            model,
            optimizer,
            schedule,
            train: TrainConfig {
                steps,
                device_batch: 8,
                log_every: 10,
                checkpoint_every: 100,
                probe_size: 8,
                task_mix: TaskId::PRETRAIN.iter().map(|t| (t.as_str().to_string(), share)).collect(),
                stages: Vec::new(),
                fine_tune: default_fine_tune(),
            },
            eval: EvalConfig::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> RunConfig {
        RunConfig::desk(
            "out".into(),
            vec![DatasetSpec { name: "toy".into(), path: "toy.jsonl".into(), multiplier: 1 }],
            None,
            512,
        )
    }

    #[test]
    fn toml_round_trip_resolves_paths() {
        let text = desk().to_toml().unwrap();
        let back = RunConfig::from_toml(&text, Path::new("/base")).unwrap();
        assert_eq!(back.output_dir, PathBuf::from("/base/out"));
        assert_eq!(back.data.datasets[0].path, PathBuf::from("/base/toy.jsonl"));
        assert_eq!(back.model, desk().model);
    }

    #[test]
    fn mix_must_sum_to_one() {
        let mut c = desk();
        c.train.task_mix.insert("uktp".into(), 0.5);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.train.task_mix = [("document-lm".to_string(), 1.0)].into();
        c.validate().unwrap();
        c.train.task_mix = [("document-lm".to_string(), 1.5), ("uktp".to_string(), -0.5)].into();
        assert!(c.validate().is_err());
        c.train.task_mix = [("bogus".to_string(), 1.0)].into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn stages_switch_mix() {
        let mut c = desk();
        c.train.stages.push(Stage { start_step: 50, task_mix: [("uktp".to_string(), 1.0)].into() });
        c.validate().unwrap();
        assert_eq!(c.mix_at(49).unwrap().len(), 5);
        assert_eq!(c.mix_at(50).unwrap(), vec![(TaskId::Uktp, 1.0)]);
        c.train.stages.push(Stage { start_step: 50, task_mix: [("uktp".to_string(), 1.0)].into() });
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = desk().to_toml().unwrap().replacen("seed = 0", "seed = 0\nbogus = 1", 1);
        assert!(matches!(RunConfig::from_toml(&text, Path::new(".")), Err(Error::Config(_))));
    }
}
