//! Progressive ramp of sequence length, batch size, learning rate and
//! dropout over the first training steps, handing off to the base decay.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail_input, Error, Result};
use crate::numerics::{lr_at, AdamHyper};

/// Linear `start → end` over the warmup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ramp<T> {
    pub start: T,
    pub end: T,
}

impl<T> Ramp<T> {
    pub const fn new(start: T, end: T) -> Self {
        Self { start, end }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgressiveSchedule {
    pub warmup_steps: u64,
    pub seq_len: Ramp<usize>,
    pub batch_size: Ramp<usize>,
    pub lr: Ramp<f64>,
    pub dropout: Ramp<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Factors {
    pub seq_len: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
}

impl ProgressiveSchedule {
    /// Base-model ramp: sequence 128→512, batch 8→2048, learning rate
    /// 0→1e-4, dropout held at 0, over 10k steps.
    pub fn base_ramp() -> Self {
        Self {
            warmup_steps: 10_000,
            seq_len: Ramp::new(128, 512),
            batch_size: Ramp::new(8, 2048),
            lr: Ramp::new(0.0, 1e-4),
            dropout: Ramp::new(0.0, 0.0),
        }
    }

    /// The base ramp shrunk to one CPU core and 200 warmup steps.
    pub fn desk() -> Self {
        Self {
            warmup_steps: 200,
            seq_len: Ramp::new(16, 64),
            batch_size: Ramp::new(2, 8),
            lr: Ramp::new(0.0, 5e-4),
            dropout: Ramp::new(0.0, 0.0),
        }
    }

    /// Constant factors; no ramp.
    pub fn fixed(seq_len: usize, batch_size: usize, lr: f64, dropout: f64) -> Self {
        Self {
            warmup_steps: 0,
            seq_len: Ramp::new(seq_len, seq_len),
            batch_size: Ramp::new(batch_size, batch_size),
            lr: Ramp::new(lr, lr),
            dropout: Ramp::new(dropout, dropout),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("schedule {what} must satisfy 0 < start <= end")));
        if self.seq_len.start == 0 || self.seq_len.start > self.seq_len.end {
            return bad("seq_len");
        }
        if self.batch_size.start == 0 || self.batch_size.start > self.batch_size.end {
            return bad("batch_size");
        }
        if !(0.0 <= self.lr.start && self.lr.start <= self.lr.end) {
            return Err(Error::Config("schedule lr must satisfy 0 <= start <= end".into()));
        }
        if !(0.0 <= self.dropout.start && self.dropout.start <= self.dropout.end && self.dropout.end < 1.0) {
            return Err(Error::Config("schedule dropout must satisfy 0 <= start <= end < 1".into()));
        }
        Ok(())
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn lerp_round(r: Ramp<usize>, t: f64) -> usize {
    (lerp(r.start as f64, r.end as f64, t) + 0.5).floor() as usize
}

/// Before the warmup ends every factor interpolates linearly (integers
/// round half up); afterwards each holds its end value and the learning
/// rate follows the base decay.
pub fn factors_at(step: u64, s: &ProgressiveSchedule, hyper: &AdamHyper) -> Factors {
    if step >= s.warmup_steps {
        return Factors {
            seq_len: s.seq_len.end,
            batch_size: s.batch_size.end,
            lr: lr_at(step, hyper).lr,
            dropout: s.dropout.end,
        };
    }
    let t = step as f64 / s.warmup_steps as f64;
    Factors {
        seq_len: lerp_round(s.seq_len, t),
        batch_size: lerp_round(s.batch_size, t),
        lr: lerp(s.lr.start, s.lr.end, t),
        dropout: lerp(s.dropout.start, s.dropout.end, t),
    }
}

/// Micro-batches per optimizer step: `ceil(scheduled / device_batch)`.
pub fn effective_batch(step: u64, s: &ProgressiveSchedule, hyper: &AdamHyper, device_batch: usize) -> Result<usize> {
    if device_batch == 0 {
        bail_input!("device batch must be at least 1");
    }
    Ok(factors_at(step, s, hyper).batch_size.div_ceil(device_batch))
}

/// Splits `batch` items into `ceil(batch / device)` consecutive micro-batch
/// sizes; all full except possibly the last.
pub fn micro_batch_sizes(batch: usize, device_batch: usize) -> Vec<usize> {
    let n = batch.div_ceil(device_batch.max(1));
    (0..n).map(|i| device_batch.min(batch - i * device_batch)).collect()
}

/// Walks a seeded per-epoch permutation of `0..len`. Batches of any size
/// take consecutive items, so an epoch yields every index exactly once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchCursor {
    len: usize,
    seed: u64,
    epoch: u64,
    pos: usize,
    #[serde(skip)]
    order: Vec<usize>,
}

impl BatchCursor {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut c = Self { len, seed, epoch: 0, pos: 0, order: Vec::new() };
        c.reshuffle();
        c
    }

    /// Restores a cursor saved mid-epoch.
    pub fn resume(len: usize, seed: u64, epoch: u64, pos: usize) -> Self {
        let mut c = Self { len, seed, epoch, pos, order: Vec::new() };
        c.reshuffle();
        c
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        self.order.shuffle(&mut rng);
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        if self.len == 0 {
            return out;
        }
        while out.len() < n {
            if self.pos == self.len {
                self.epoch += 1;
                self.pos = 0;
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}
