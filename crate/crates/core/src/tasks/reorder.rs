use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::special;
use crate::error::{bail_input, Result};
pub use crate::framework::reorder_classes;

pub fn factorial(n: usize) -> usize {
    (1..=n).product()
}

fn check_perm(perm: &[usize]) -> Result<()> {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            bail_input!("{:?} is not a permutation", perm);
        }
        seen[p] = true;
    }
    Ok(())
}

/// `Σ_{j=1..n-1} j! + lexicographic rank`, for a permutation of `n ≤ m`
/// items. `perm[i]` is the original segment shown at position `i`.
pub fn perm_to_class(perm: &[usize], m: usize) -> Result<usize> {
    let n = perm.len();
    if n == 0 || n > m {
        bail_input!("permutation length {} outside 1..={}", n, m);
    }
    check_perm(perm)?;
    let mut rank = 0;
    for i in 0..n {
        let smaller_later = perm[i + 1..].iter().filter(|&&q| q < perm[i]).count();
        rank += smaller_later * factorial(n - 1 - i);
    }
    Ok(reorder_classes(n - 1) + rank)
}

pub fn class_to_perm(class: usize, m: usize) -> Result<Vec<usize>> {
    if class >= reorder_classes(m) {
        bail_input!("class {} outside [0, {})", class, reorder_classes(m));
    }
    let n = (1..=m).find(|&n| class < reorder_classes(n)).expect("class bounded by m");
    let mut rank = class - reorder_classes(n - 1);
    let mut pool: Vec<usize> = (0..n).collect();
    let mut perm = Vec::with_capacity(n);
    for i in 0..n {
        let f = factorial(n - 1 - i);
        perm.push(pool.remove(rank / f));
        rank %= f;
    }
    Ok(perm)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReorderSample {
    /// `[CLS] seg [SEP] seg [SEP] ...` in shuffled order.
    pub input: Vec<u32>,
    /// Shuffled segments, each a run of whole sentences.
    pub segments: Vec<Vec<u32>>,
    pub n: usize,
    pub perm: Vec<usize>,
    pub label: usize,
}

impl ReorderSample {
    /// Segments put back in original order.
    pub fn restore(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.n];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = self.segments[i].clone();
        }
        out
    }
}

pub fn serialize_segments(segments: &[Vec<u32>]) -> Vec<u32> {
    let mut input = vec![special::CLS];
    for s in segments {
        input.extend_from_slice(s);
        input.push(special::SEP);
    }
    input
}

/// Splits the paragraph at `n - 1` distinct sentence boundaries, with `n`
/// uniform in `1..=m` (clamped to the sentence count), and shuffles the
/// segments uniformly.
pub fn build_reorder_sample<R: Rng + ?Sized>(sentences: &[Vec<u32>], m: usize, rng: &mut R) -> Result<ReorderSample> {
    if sentences.is_empty() {
        bail_input!("empty paragraph");
    }
    if m == 0 {
        bail_input!("segment bound m must be positive");
    }
    let n = rng.gen_range(1..=m).min(sentences.len());
    let mut cuts: Vec<usize> = (1..sentences.len()).collect::<Vec<_>>().choose_multiple(rng, n - 1).copied().collect();
    cuts.sort_unstable();
    cuts.push(sentences.len());
    let mut original = Vec::with_capacity(n);
    let mut start = 0;
    for &c in &cuts {
        original.push(sentences[start..c].concat());
        start = c;
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let segments: Vec<Vec<u32>> = perm.iter().map(|&p| original[p].clone()).collect();
    let label = perm_to_class(&perm, m)?;
    Ok(ReorderSample { input: serialize_segments(&segments), segments, n, perm, label })
}
