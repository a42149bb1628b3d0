//! Per-layer key/value cache for incremental forward passes. Append-only
//! within an inference episode; rows are laid out per token as [H × d_head].

use crate::tensor::Scalar;

use super::ModelConfig;

#[derive(Debug, Clone)]
pub(crate) struct LayerKv<T> {
    pub k: Vec<T>,
    pub v: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct KvCache<T = f32> {
    pub(crate) layers: Vec<LayerKv<T>>,
    cached_len: usize,
    row_width: usize,
}

impl<T: Scalar> KvCache<T> {
    pub fn new(config: &ModelConfig) -> Self {
        KvCache {
            layers: (0..config.n_layers)
                .map(|_| LayerKv {
                    k: Vec::new(),
                    v: Vec::new(),
                })
                .collect(),
            cached_len: 0,
            row_width: config.d_model,
        }
    }

    /// Number of cached token positions (equal across layers).
    pub fn cached_len(&self) -> usize {
        self.cached_len
    }

    pub(crate) fn row_width(&self) -> usize {
        self.row_width
    }

    /// Extend the bookkeeping after all layers appended `n` rows.
    pub(crate) fn note_appended(&mut self, n: usize) {
        self.cached_len += n;
        debug_assert!(self
            .layers
            .iter()
            .all(|l| l.k.len() == self.cached_len * self.row_width
                && l.v.len() == self.cached_len * self.row_width));
    }
}
