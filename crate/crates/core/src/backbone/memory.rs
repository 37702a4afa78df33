use super::config::RecurrenceMode;
use crate::error::{bail_shape, Result};

/// Cached per-layer hidden rows carried between segments. Values only; the
/// cache never links back into a computation graph.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    width: usize,
    rows: usize,
    layers: Vec<Vec<f64>>,
    segments_seen: u64,
}

impl MemoryState {
    pub fn empty(layers: usize, width: usize) -> Self {
        Self { width, rows: 0, layers: vec![Vec::new(); layers], segments_seen: 0 }
    }

    pub fn from_layers(width: usize, rows: usize, layers: Vec<Vec<f64>>, segments_seen: u64) -> Result<Self> {
        if layers.iter().any(|l| l.len() != rows * width) {
            bail_shape!("memory layers must all be {}x{}", rows, width);
        }
        Ok(Self { width, rows, layers, segments_seen })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Cached positions per layer.
    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn segments_seen(&self) -> u64 {
        self.segments_seen
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.layers[l]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.layers[l]
    }

    pub fn check(&self, layers: usize, width: usize) -> Result<()> {
        if self.layers.len() != layers || (self.width != width && self.rows > 0) {
            bail_shape!(
                "memory has {} layers of width {}, stack expects {} of width {}",
                self.layers.len(),
                self.width,
                layers,
                width
            );
        }
        Ok(())
    }
}

/// Builds the next memory from this segment's per-layer states.
///
/// `states[0]` is the stack input and `states[l + 1]` the output of layer
/// `l`, each `rows × width`. Shift-down caches `states[l]` (the input layer
/// `l` saw) for layer `l`; same-layer caches `states[l + 1]` (layer `l`'s own
/// output). The new rows are appended to the old cache and only the last
/// `memory_len` positions are kept.
pub fn update_memory(
    mode: RecurrenceMode,
    prev: &MemoryState,
    states: &[Vec<f64>],
    rows: usize,
    memory_len: usize,
) -> Result<MemoryState> {
    let layers = prev.num_layers();
    if states.len() != layers + 1 {
        bail_shape!("{} layer states for a {}-layer stack", states.len(), layers);
    }
    let width = if rows == 0 { prev.width } else { states[0].len() / rows };
    if states.iter().any(|s| s.len() != rows * width) {
        bail_shape!("layer states must be {}x{}", rows, width);
    }
    prev.check(layers, width)?;
    if memory_len == 0 {
        return Ok(MemoryState { width, rows: 0, layers: vec![Vec::new(); layers], segments_seen: prev.segments_seen + 1 });
    }
    let total = prev.rows + rows;
    let keep = total.min(memory_len);
    let skip = total - keep;
    let new_layers = (0..layers)
        .map(|l| {
            let src = match mode {
                RecurrenceMode::ShiftDown => &states[l],
                RecurrenceMode::SameLayer => &states[l + 1],
            };
            let mut joined = Vec::with_capacity(total * width);
            joined.extend_from_slice(&prev.layers[l]);
            joined.extend_from_slice(src);
            joined.split_off(skip * width)
        })
        .collect();
    Ok(MemoryState { width, rows: keep, layers: new_layers, segments_seen: prev.segments_seen + 1 })
}
