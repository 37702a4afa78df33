use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::special;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceLabel {
    Adjacent = 0,
    SameDocNonadjacent = 1,
    DifferentDocs = 2,
}

impl DistanceLabel {
    pub const ALL: [DistanceLabel; 3] =
        [DistanceLabel::Adjacent, DistanceLabel::SameDocNonadjacent, DistanceLabel::DifferentDocs];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Label implied by two sentence coordinates.
    pub fn from_provenance(p: &Provenance) -> Self {
        if p.doc_a != p.doc_b {
            DistanceLabel::DifferentDocs
        } else if p.sent_a.abs_diff(p.sent_b) == 1 {
            DistanceLabel::Adjacent
        } else {
            DistanceLabel::SameDocNonadjacent
        }
    }
}

/// Document and sentence index (within the document) of each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub doc_a: usize,
    pub sent_a: usize,
    pub doc_b: usize,
    pub sent_b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistanceSample {
    /// `[CLS] a [SEP] b [SEP]`.
    pub input: Vec<u32>,
    pub label: DistanceLabel,
    pub provenance: Provenance,
}

pub const DEFAULT_DISTANCE_RATIO: [f64; 3] = [1.0, 1.0, 1.0];

fn feasible(corpus: &[Vec<Vec<u32>>]) -> [bool; 3] {
    [corpus.iter().any(|d| d.len() >= 2), corpus.iter().any(|d| d.len() >= 3), corpus.len() >= 2]
}

/// Draws a class by `ratio` among those the corpus can supply (others are
/// skipped with a warning), then a pair of that class. `corpus[d][s]` is
/// sentence `s` of document `d`.
pub fn build_distance_sample<R: Rng + ?Sized>(
    corpus: &[Vec<Vec<u32>>],
    ratio: [f64; 3],
    rng: &mut R,
) -> Result<DistanceSample> {
    if ratio.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
        return Err(Error::Config(format!("invalid distance ratio {:?}", ratio)));
    }
    let ok = feasible(corpus);
    for (label, &f) in DistanceLabel::ALL.iter().zip(&ok) {
        if !f && ratio[label.index()] > 0.0 {
            log::warn!("corpus too small for distance class {:?}; skipped", label);
        }
    }
    let weights: Vec<f64> = (0..3).map(|k| if ok[k] { ratio[k] } else { 0.0 }).collect();
    let Ok(dist) = WeightedIndex::new(&weights) else {
        return Err(Error::Data("corpus supports no sentence-distance class".into()));
    };
    let k = dist.sample(rng);
    let label = DistanceLabel::ALL[k];
    let pick_doc = |rng: &mut R, min: usize| {
        let eligible: Vec<usize> = (0..corpus.len()).filter(|&d| corpus[d].len() >= min).collect();
        eligible[rng.gen_range(0..eligible.len())]
    };
    let provenance = match label {
        DistanceLabel::Adjacent => {
            let d = pick_doc(rng, 2);
            let s = rng.gen_range(0..corpus[d].len() - 1);
            Provenance { doc_a: d, sent_a: s, doc_b: d, sent_b: s + 1 }
        }
        DistanceLabel::SameDocNonadjacent => {
            let d = pick_doc(rng, 3);
            let n = corpus[d].len();
            let (a, b) = loop {
                let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
                if a.abs_diff(b) >= 2 {
                    break (a.min(b), a.max(b));
                }
            };
            Provenance { doc_a: d, sent_a: a, doc_b: d, sent_b: b }
        }
        DistanceLabel::DifferentDocs => {
            let a = rng.gen_range(0..corpus.len());
            let b = (a + rng.gen_range(1..corpus.len())) % corpus.len();
            let sa = rng.gen_range(0..corpus[a].len());
            let sb = rng.gen_range(0..corpus[b].len());
            Provenance { doc_a: a, sent_a: sa, doc_b: b, sent_b: sb }
        }
    };
    debug_assert_eq!(DistanceLabel::from_provenance(&provenance), label);
    let mut input = vec![special::CLS];
    input.extend_from_slice(&corpus[provenance.doc_a][provenance.sent_a]);
    input.push(special::SEP);
    input.extend_from_slice(&corpus[provenance.doc_b][provenance.sent_b]);
    input.push(special::SEP);
    Ok(DistanceSample { input, label, provenance })
}
