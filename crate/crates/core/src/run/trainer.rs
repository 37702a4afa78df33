use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointHeader, CursorState};
use super::{derive_seed, RunConfig};
use crate::error::{Error, Result};
use crate::framework::UnifiedModel;
use crate::numerics::{adam_step, ForwardCtx, Graph, OptimizerState, ParamId, Trainable};
use crate::schedule::{factors_at, micro_batch_sizes, BatchCursor, Factors};
use crate::tasks::{compute_task_loss, Sample, TaskId};

/// What one optimizer update did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub task: TaskId,
    /// Batch loss before the update.
    pub loss: f64,
    pub factors: Factors,
    pub micro_batches: usize,
    /// Samples skipped because nothing trainable fit the scheduled length;
    /// a task none of whose samples fit is passed over for the next draw.
    pub skipped: usize,
}

/// One line of the loss log. `step` counts completed updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<StepInfo>,
    /// Loss of each task on its fixed probe samples, dropout off.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<BTreeMap<TaskId, f64>>,
}

/// Multi-task loop: one task per update, drawn from the mix in force, with
/// progressive factors and micro-batch accumulation. All randomness derives
/// from `(seed, step)` and the saved cursors, so a resumed run continues
/// bit-identically.
pub struct Trainer {
    cfg: RunConfig,
    pub model: UnifiedModel,
    pub opt: OptimizerState,
    step: u64,
    pools: BTreeMap<TaskId, Vec<Sample>>,
    cursors: BTreeMap<TaskId, BatchCursor>,
    probes: BTreeMap<TaskId, Vec<Sample>>,
    trainable: BTreeSet<ParamId>,
    tokenizer_md5: String,
}

impl Trainer {
    /// Fresh model initialised from the run seed; every parameter trains.
    pub fn new(cfg: RunConfig, archive: Vec<Sample>, tokenizer_md5: String) -> Result<Self> {
        let model = UnifiedModel::new(cfg.model.clone(), derive_seed(cfg.seed, "init", 0))?;
        let all = model.params.ids().collect();
        Self::with_model(cfg, model, archive, tokenizer_md5, all)
    }

    /// Trains `trainable` of a given model with a fresh optimizer.
    pub fn with_model(
        cfg: RunConfig,
        model: UnifiedModel,
        archive: Vec<Sample>,
        tokenizer_md5: String,
        trainable: Vec<ParamId>,
    ) -> Result<Self> {
        cfg.validate()?;
        if model.cfg != cfg.model {
            return Err(Error::Config("model configuration differs from the run config".into()));
        }
        let mut pools: BTreeMap<TaskId, Vec<Sample>> = BTreeMap::new();
        for s in archive {
            pools.entry(s.task()).or_default().push(s);
        }
        let tasks = cfg.all_tasks()?;
        for t in &tasks {
            if !pools.contains_key(t) {
                return Err(Error::Data(format!("archive has no {t} samples")));
            }
        }
        let seq_end = cfg.schedule.seq_len.end;
        let mut probes = BTreeMap::new();
        let mut cursors = BTreeMap::new();
        for t in tasks {
            let pool = &pools[&t];
            let mut pick = BatchCursor::new(pool.len(), derive_seed(cfg.seed, &format!("probe/{t}"), 0));
            let probe: Vec<Sample> = pick
                .next_batch(cfg.train.probe_size.min(pool.len()))
                .into_iter()
                .filter_map(|i| pool[i].fit(seq_end))
                .collect();
            if !probe.is_empty() {
                probes.insert(t, probe);
            }
            cursors.insert(t, BatchCursor::new(pool.len(), derive_seed(cfg.seed, &format!("cursor/{t}"), 0)));
        }
        let opt = OptimizerState::new(cfg.optimizer)?;
        Ok(Self {
            cfg,
            model,
            opt,
            step: 0,
            pools,
            cursors,
            probes,
            trainable: trainable.into_iter().collect(),
            tokenizer_md5,
        })
    }

    /// Continues a run from its checkpoint: weights, moments, step and cursors.
    pub fn resume(cfg: RunConfig, ckpt: &Checkpoint, archive: Vec<Sample>, tokenizer_md5: String) -> Result<Self> {
        if ckpt.header.tokenizer_md5 != tokenizer_md5 {
            return Err(Error::Data("checkpoint was trained with a different tokenizer".into()));
        }
        if ckpt.header.seed != cfg.seed {
            return Err(Error::Config(format!("checkpoint seed {} differs from config seed {}", ckpt.header.seed, cfg.seed)));
        }
        let model = ckpt.restore_model()?;
        let all = model.params.ids().collect();
        let mut t = Self::with_model(cfg, model, archive, tokenizer_md5, all)?;
        t.opt = ckpt.restore_optimizer(&t.model)?;
        t.opt.hyper = t.cfg.optimizer;
        t.step = ckpt.header.step;
        for (task, c) in t.cursors.iter_mut() {
            if let Some(s) = ckpt.header.cursors.get(task.as_str()) {
                *c = BatchCursor::resume(c.len(), derive_seed(t.cfg.seed, &format!("cursor/{task}"), 0), s.epoch, s.position);
            }
        }
        Ok(t)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn probe_tasks(&self) -> Vec<TaskId> {
        self.probes.keys().copied().collect()
    }

    /// Tasks in the order this step tries them: a weighted draw from the
    /// mix in force, then weighted draws among the rest.
    fn task_order(&self) -> Result<Vec<TaskId>> {
        let mut mix = self.cfg.mix_at(self.step)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, "task", self.step));
        let mut order = Vec::with_capacity(mix.len());
        while !mix.is_empty() {
            let dist = WeightedIndex::new(mix.iter().map(|m| m.1)).map_err(|e| Error::Config(e.to_string()))?;
            order.push(mix.remove(dist.sample(&mut rng)).0);
        }
        Ok(order)
    }

    /// Next `n` samples of `task` that fit `seq_len`; unfit ones are skipped
    /// for this epoch, at most one pool's worth per call.
    fn next_batch(&mut self, task: TaskId, n: usize, seq_len: usize) -> (Vec<Sample>, usize) {
        let pool = &self.pools[&task];
        let cursor = self.cursors.get_mut(&task).expect("cursor per pool");
        let (mut batch, mut skipped) = (Vec::with_capacity(n), 0);
        while batch.len() < n && skipped < pool.len() {
            let i = cursor.next_batch(1)[0];
            match pool[i].fit(seq_len) {
                Some(s) => batch.push(s),
                None => skipped += 1,
            }
        }
        (batch, skipped)
    }

    pub fn train_step(&mut self) -> Result<StepInfo> {
        let f = factors_at(self.step, &self.cfg.schedule, &self.cfg.optimizer);
        let mut drawn = None;
        let mut skipped = 0;
        for task in self.task_order()? {
            let (batch, s) = self.next_batch(task, f.batch_size, f.seq_len);
            skipped += s;
            if !batch.is_empty() {
                drawn = Some((task, batch));
                break;
            }
            log::debug!("step {}: no {task} sample fits length {}; redrawing", self.step, f.seq_len);
        }
        let Some((task, batch)) = drawn else {
            return Err(Error::Data(format!("no sample of any mixed task fits sequence length {}", f.seq_len)));
        };
        let micro = micro_batch_sizes(batch.len(), self.cfg.train.device_batch);
        self.model.params.zero_grad();
        let mut loss = 0.0;
        let mut start = 0;
        for (m, &size) in micro.iter().enumerate() {
            let chunk = &batch[start..start + size];
            start += size;
            let mut g = Graph::new();
            let seed = derive_seed(self.cfg.seed, "dropout", self.step.wrapping_mul(1 << 16) + m as u64);
            let mut ctx = ForwardCtx::train(f.dropout, seed, Trainable::Only(self.trainable.clone()));
            let l = compute_task_loss(&self.model, &mut g, &mut ctx, task, chunk, f.seq_len)?;
            let w = size as f64 / batch.len() as f64;
            loss += g.value(l)[0] * w;
            self.model.params.backward_scaled(&g, l, w)?;
        }
        let ids: Vec<ParamId> = self.model.params.with_grad().into_iter().filter(|id| self.trainable.contains(id)).collect();
        adam_step(&mut self.model.params, &ids, &mut self.opt, f.lr)?;
        self.step += 1;
        if !loss.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite loss at step {}", self.step)));
        }
        Ok(StepInfo { task, loss, factors: f, micro_batches: micro.len(), skipped })
    }

    /// Loss of every probed task at the final scheduled length, no dropout.
    pub fn probe_losses(&self) -> Result<BTreeMap<TaskId, f64>> {
        let seq = self.cfg.schedule.seq_len.end;
        let mut out = BTreeMap::new();
        for (&task, samples) in &self.probes {
            let mut g = Graph::new();
            let l = compute_task_loss(&self.model, &mut g, &mut ForwardCtx::eval(), task, samples, seq)?;
            out.insert(task, g.value(l)[0]);
        }
        Ok(out)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let header = CheckpointHeader {
            model: self.model.cfg.clone(),
            seed: self.cfg.seed,
            step: self.step,
            optimizer: self.opt.hyper,
            optimizer_step: self.opt.step,
            tokenizer_md5: self.tokenizer_md5.clone(),
            cursors: self
                .cursors
                .iter()
                .map(|(t, c)| (t.as_str().to_string(), CursorState { epoch: c.epoch(), position: c.position() }))
                .collect(),
        };
        Checkpoint::capture(&self.model, Some(&self.opt), header)
    }
}
