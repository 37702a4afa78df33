//! Named parameter storage shared across graphs.

use md5::{Digest, Md5};

use super::graph::{Grads, Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub group: String,
    pub tensor: Tensor,
    /// Biases and layer-norm affine terms are exempt from weight decay.
    pub decay: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: impl Into<String>, tensor: Tensor, decay: bool) -> ParamId {
        self.params.push(Param { name: name.into(), group: group.into(), tensor, decay });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn group_ids(&self, group: &str) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.group == group).map(|(id, _)| id).collect()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Loads a parameter into `g`; repeated calls within one graph share the node.
    pub fn bind(&self, g: &mut Graph, id: ParamId, trainable: bool) -> Var {
        g.bind_param(id, &self.params[id.0].tensor, trainable)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Runs the reverse sweep from `loss` and adds the result into the grad
    /// buffer of every trainable parameter bound in `g`. Bound parameters the
    /// loss does not reach receive an explicit zero gradient.
    pub fn backward(&mut self, g: &Graph, loss: Var) -> Result<()> {
        self.backward_scaled(g, loss, 1.0)
    }

    /// As [`ParamStore::backward`], multiplying the gradient by `scale`.
    pub fn backward_scaled(&mut self, g: &Graph, loss: Var, scale: f64) -> Result<()> {
        let grads: Grads = g.backward(loss)?;
        for (id, var) in g.bindings() {
            if !g.requires_grad(var) {
                continue;
            }
            let t = &mut self.params[id.0].tensor;
            match grads.wrt(var) {
                Some(grad) if scale == 1.0 => t.accumulate_grad(grad),
                Some(grad) => t.accumulate_grad(&grad.iter().map(|x| x * scale).collect::<Vec<_>>()),
                None => t.accumulate_grad(&vec![0.0; t.numel()]),
            }
        }
        Ok(())
    }

    /// Ids whose grad buffer is populated.
    pub fn with_grad(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.tensor.grad().is_some()).map(|(id, _)| id).collect()
    }

    /// MD5 over the raw bytes of the listed parameters, in order.
    pub fn checksum(&self, ids: &[ParamId]) -> [u8; 16] {
        let mut h = Md5::new();
        for id in ids {
            for v in self.params[id.0].tensor.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}
