//! Sample construction and losses for the pre-training objectives.

mod distance;
mod doclm;
mod generate;
mod knowledge;
mod mlm;
mod reorder;

pub use distance::{build_distance_sample, DistanceLabel, DistanceSample, Provenance, DEFAULT_DISTANCE_RATIO};
pub use doclm::{segment_document_lm, DocLmSample};
pub use generate::{generate_samples, tokenize_document, SampleConfig, TokenizedDoc, TokenizedSentence};
pub use knowledge::{
    build_relation_probe_sample, build_uktp_sample, pair_triples_with_sentences, KnowledgeGraph, KnowledgeTriple,
    RelationProbeSample, TriplePair, TripleRecord, UktpMode, UktpSample,
};
pub use mlm::{build_knowledge_masked_sample, build_nonempty_masked_sample, validate_spans, MaskedSample, Span};
pub use reorder::{build_reorder_sample, class_to_perm, factorial, perm_to_class, reorder_classes, serialize_segments, ReorderSample};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backbone::Paradigm;
use crate::error::{bail_input, Error, Result};
use crate::framework::UnifiedModel;
use crate::numerics::{ForwardCtx, Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskId {
    KnowledgeMlm,
    DocumentLm,
    SentenceReorder,
    SentenceDistance,
    Uktp,
    /// Relation classification from entity-marker representations; used for
    /// probing, not in the default pre-training mix.
    RelationProbe,
}

impl TaskId {
    pub const PRETRAIN: [TaskId; 5] =
        [TaskId::KnowledgeMlm, TaskId::DocumentLm, TaskId::SentenceReorder, TaskId::SentenceDistance, TaskId::Uktp];
    pub const ALL: [TaskId; 6] = [
        TaskId::KnowledgeMlm,
        TaskId::DocumentLm,
        TaskId::SentenceReorder,
        TaskId::SentenceDistance,
        TaskId::Uktp,
        TaskId::RelationProbe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::KnowledgeMlm => "knowledge-mlm",
            TaskId::DocumentLm => "document-lm",
            TaskId::SentenceReorder => "sentence-reorder",
            TaskId::SentenceDistance => "sentence-distance",
            TaskId::Uktp => "uktp",
            TaskId::RelationProbe => "relation-probe",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| Error::Data(format!("unknown task `{s}`")))
    }

    pub fn paradigm(self) -> Paradigm {
        match self {
            TaskId::DocumentLm => Paradigm::Nlg,
            _ => Paradigm::Nlu,
        }
    }
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sample {
    KnowledgeMlm(MaskedSample),
    DocumentLm(DocLmSample),
    Reorder(ReorderSample),
    Distance(DistanceSample),
    Uktp(UktpSample),
    RelationProbe(RelationProbeSample),
}

/// One line of the sample archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub task_id: String,
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    pub metadata: Value,
}

/// Serializes `s`, moving `input` and the target field out of the object.
fn split<T: Serialize>(task: TaskId, s: &T, target_key: &str, targets: Vec<u32>) -> Result<SampleRecord> {
    let mut v = serde_json::to_value(s)?;
    let obj = v.as_object_mut().expect("samples serialize as objects");
    let inputs = serde_json::from_value(obj.remove("input").expect("samples carry input"))?;
    obj.remove(target_key);
    Ok(SampleRecord { task_id: task.as_str().into(), inputs, targets, metadata: v })
}

fn join<T: for<'de> Deserialize<'de>>(r: &SampleRecord, target_key: &str, target: Value) -> Result<T> {
    let mut v = r.metadata.clone();
    let obj = v.as_object_mut().ok_or_else(|| Error::Data("sample metadata must be an object".into()))?;
    obj.insert("input".into(), serde_json::to_value(&r.inputs)?);
    obj.insert(target_key.into(), target);
    Ok(serde_json::from_value(v)?)
}

fn single(r: &SampleRecord) -> Result<u32> {
    match r.targets.as_slice() {
        [t] => Ok(*t),
        _ => Err(Error::Data(format!("{} record needs exactly one target", r.task_id))),
    }
}

impl Sample {
    pub fn task(&self) -> TaskId {
        match self {
            Sample::KnowledgeMlm(_) => TaskId::KnowledgeMlm,
            Sample::DocumentLm(_) => TaskId::DocumentLm,
            Sample::Reorder(_) => TaskId::SentenceReorder,
            Sample::Distance(_) => TaskId::SentenceDistance,
            Sample::Uktp(_) => TaskId::Uktp,
            Sample::RelationProbe(_) => TaskId::RelationProbe,
        }
    }

    pub fn input(&self) -> &[u32] {
        match self {
            Sample::KnowledgeMlm(s) => &s.input,
            Sample::DocumentLm(s) => &s.input,
            Sample::Reorder(s) => &s.input,
            Sample::Distance(s) => &s.input,
            Sample::Uktp(s) => &s.input,
            Sample::RelationProbe(s) => &s.input,
        }
    }

    pub fn to_record(&self) -> Result<SampleRecord> {
        let t = self.task();
        match self {
            Sample::KnowledgeMlm(s) => split(t, s, "targets", s.targets.clone()),
            Sample::DocumentLm(s) => split(t, s, "targets", s.targets.clone()),
            Sample::Reorder(s) => split(t, s, "label", vec![s.label as u32]),
            Sample::Distance(s) => split(t, s, "label", vec![s.label.index() as u32]),
            Sample::Uktp(s) => split(t, s, "targets", s.targets.clone()),
            Sample::RelationProbe(s) => split(t, s, "label", vec![s.label as u32]),
        }
    }

    pub fn from_record(r: &SampleRecord) -> Result<Self> {
        let targets = || serde_json::to_value(&r.targets);
        Ok(match TaskId::parse(&r.task_id)? {
            TaskId::KnowledgeMlm => Sample::KnowledgeMlm(join(r, "targets", targets()?)?),
            TaskId::DocumentLm => Sample::DocumentLm(join(r, "targets", targets()?)?),
            TaskId::SentenceReorder => Sample::Reorder(join(r, "label", single(r)?.into())?),
            TaskId::SentenceDistance => {
                let label = *DistanceLabel::ALL
                    .get(single(r)? as usize)
                    .ok_or_else(|| Error::Data("distance label out of range".into()))?;
                Sample::Distance(join(r, "label", serde_json::to_value(label)?)?)
            }
            TaskId::Uktp => Sample::Uktp(join(r, "targets", targets()?)?),
            TaskId::RelationProbe => Sample::RelationProbe(join(r, "label", single(r)?.into())?),
        })
    }

    /// Restricts a sample to `len` input tokens. Token-prediction samples
    /// keep the masks inside the window; `None` when nothing trainable
    /// remains.
    pub fn fit(&self, len: usize) -> Option<Sample> {
        if self.input().len() <= len || matches!(self, Sample::DocumentLm(_)) {
            return Some(self.clone());
        }
        match self {
            Sample::KnowledgeMlm(s) => {
                let t = s.truncate(len);
                (!t.positions.is_empty()).then_some(Sample::KnowledgeMlm(t))
            }
            Sample::Reorder(s) => Some(Sample::Reorder(ReorderSample { input: s.input[..len].to_vec(), ..s.clone() })),
            Sample::Distance(s) => Some(Sample::Distance(DistanceSample { input: s.input[..len].to_vec(), ..s.clone() })),
            Sample::Uktp(s) => {
                let keep: Vec<(usize, u32)> = s.positions.iter().zip(&s.targets).filter(|(p, _)| **p < len).map(|(p, t)| (*p, *t)).collect();
                if keep.is_empty() || s.markers[3] >= len {
                    return None;
                }
                let (positions, targets) = keep.into_iter().unzip();
                Some(Sample::Uktp(UktpSample { input: s.input[..len].to_vec(), positions, targets, ..s.clone() }))
            }
            Sample::RelationProbe(s) => (s.markers[3] < len)
                .then(|| Sample::RelationProbe(RelationProbeSample { input: s.input[..len].to_vec(), ..s.clone() })),
            Sample::DocumentLm(_) => unreachable!(),
        }
    }
}

fn check_len(input: &[u32], seq_len: usize) -> Result<()> {
    if input.len() > seq_len {
        bail_input!("input of {} tokens exceeds scheduled length {}", input.len(), seq_len);
    }
    Ok(())
}

fn as_targets(t: &[u32]) -> Vec<usize> {
    t.iter().map(|&x| x as usize).collect()
}

/// Mean over samples of each sample's own loss: mean token cross-entropy
/// for token-prediction tasks, class cross-entropy for classification.
/// Document-LM samples run as `seq_len` segments with carried memory.
pub fn compute_task_loss(
    model: &UnifiedModel,
    g: &mut Graph,
    ctx: &mut ForwardCtx,
    task: TaskId,
    batch: &[Sample],
    seq_len: usize,
) -> Result<Var> {
    if batch.is_empty() {
        bail_input!("empty batch for {}", task);
    }
    let weight = 1.0 / batch.len() as f64;
    let mut total: Option<Var> = None;
    for sample in batch {
        if sample.task() != task {
            bail_input!("{} sample in a {} batch", sample.task(), task);
        }
        if task.paradigm() == Paradigm::Nlu {
            check_len(sample.input(), seq_len)?;
        }
        let loss = match sample {
            Sample::KnowledgeMlm(MaskedSample { input, positions, targets, .. })
            | Sample::Uktp(UktpSample { input, positions, targets, .. }) => {
                if positions.is_empty() {
                    bail_input!("{} sample without targets", task);
                }
                let h = model.encode_nlu(g, ctx, input)?;
                let logits = model.mlm_logits(g, ctx, h, positions)?;
                g.cross_entropy(logits, &as_targets(targets))?
            }
            Sample::Reorder(s) => {
                let h = model.encode_nlu(g, ctx, &s.input)?;
                let logits = model.cls_logits(g, ctx, h, model.reorder_cls)?;
                g.cross_entropy(logits, &[s.label])?
            }
            Sample::Distance(s) => {
                let h = model.encode_nlu(g, ctx, &s.input)?;
                let logits = model.cls_logits(g, ctx, h, model.distance_cls)?;
                g.cross_entropy(logits, &[s.label.index()])?
            }
            Sample::RelationProbe(s) => {
                let h = model.encode_nlu(g, ctx, &s.input)?;
                let logits = model.relation_logits(g, ctx, h, s.markers)?;
                g.cross_entropy(logits, &[s.label])?
            }
            Sample::DocumentLm(s) => doc_lm_loss(model, g, ctx, s, seq_len, true)?.0,
        };
        let scaled = g.scale(loss, weight);
        total = Some(match total {
            Some(t) => g.add(t, scaled)?,
            None => scaled,
        });
    }
    Ok(total.expect("batch is non-empty"))
}

/// Token-weighted loss over all segments of one document, and each
/// segment's own mean loss. Without `carry`, every segment starts from empty
/// memory.
pub fn doc_lm_loss(
    model: &UnifiedModel,
    g: &mut Graph,
    ctx: &mut ForwardCtx,
    sample: &DocLmSample,
    seq_len: usize,
    carry: bool,
) -> Result<(Var, Vec<f64>)> {
    let total = sample.targets.len() as f64;
    let mut memory = model.empty_memory();
    let mut acc: Option<Var> = None;
    let mut per_segment = Vec::new();
    for (inp, tgt) in sample.segments(seq_len)? {
        let out = model.decode_nlg(g, ctx, &inp, &memory)?;
        let ce = g.cross_entropy(out.logits, &as_targets(&tgt))?;
        per_segment.push(g.value(ce)[0]);
        let term = g.scale(ce, tgt.len() as f64 / total);
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
        if carry {
            memory = out.memory;
        }
    }
    Ok((acc.expect("documents are non-empty"), per_segment))
}
