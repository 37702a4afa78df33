use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::Result;

/// Which parameters enter a graph as differentiable leaves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Trainable {
    All,
    Nothing,
    Only(BTreeSet<ParamId>),
}

impl Trainable {
    pub fn contains(&self, id: ParamId) -> bool {
        match self {
            Trainable::All => true,
            Trainable::Nothing => false,
            Trainable::Only(set) => set.contains(&id),
        }
    }
}

/// Per-forward settings: dropout rate, its RNG, and the trainable set.
#[derive(Debug, Clone)]
pub struct ForwardCtx {
    dropout: f64,
    rng: ChaCha8Rng,
    trainable: Trainable,
}

impl ForwardCtx {
    pub fn train(dropout: f64, seed: u64, trainable: Trainable) -> Self {
        Self { dropout, rng: ChaCha8Rng::seed_from_u64(seed), trainable }
    }

    /// No dropout, nothing differentiable.
    pub fn eval() -> Self {
        Self::train(0.0, 0, Trainable::Nothing)
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout
    }

    pub fn trainable(&self) -> &Trainable {
        &self.trainable
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore, id: ParamId) -> Var {
        store.bind(g, id, self.trainable.contains(id))
    }

    /// Inverted dropout; identity when the rate is zero.
    pub fn dropout(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        if self.dropout <= 0.0 {
            return Ok(x);
        }
        let (r, c) = g.dims(x);
        let keep = 1.0 - self.dropout;
        let mask: Vec<f64> = (0..r * c).map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let m = g.constant_raw(r, c, mask);
        g.mul(x, m)
    }
}
