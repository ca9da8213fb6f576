//! Multi-modal neural additive model.
//!
//! Every feature `j` of modality `m` owns a shape function, a one-input
//! perceptron `x -> ReLU(w_in * x + b_hidden) · W_out` with `H` hidden units
//! and `C` outputs. Modality `m`'s logits are its bias plus the sum of its
//! shape functions; the fused prediction is the mean of the logits of the
//! modalities that are present.
//!
//! # Parameter layout
//!
//! Parameters live in one flat `f64` vector, modality-major then
//! feature-major. Modality `m`'s segment is
//!
//! ```text
//! [ shape_0 | shape_1 | ... | shape_{d_m - 1} | bias (C) ]
//! shape_j = [ w_in (H) | b_hidden (H) | w_out (H x C, row-major by hidden unit) ]
//! ```
//!
//! so segments are contiguous and the server can aggregate modality by
//! modality.

mod forward;
mod loss;

pub use forward::{attribution, forward, log_softmax, predict_proba, softmax, Attribution, Logits, ModalityAttribution};
pub use loss::{loss_and_grad, Hyperparams, LossBreakdown};

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modality::ModalitySet;
use crate::rng::SimRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NamError {
    #[error("unknown modality index {0}")]
    UnknownModality(usize),
    #[error("sample does not carry features for modality {0}")]
    MissingModality(usize),
    #[error("modality {modality} expects {expected} features, got {found}")]
    DimensionMismatch { modality: usize, expected: usize, found: usize },
    #[error("no modalities available")]
    NoModalities,
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("parameter length mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("parameter layouts differ")]
    LayoutMismatch,
    #[error("invalid hyperparameter `{field}`: {reason}")]
    InvalidHyper { field: &'static str, reason: String },
    #[error("invalid parameter snapshot: {0}")]
    Snapshot(String),
}

/// Shape of a [`NamParams`] vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamLayout {
    pub modality_ids: Vec<String>,
    pub dims: Vec<usize>,
    pub hidden: usize,
    pub classes: usize,
}

impl NamLayout {
    pub fn new(modality_ids: Vec<String>, dims: Vec<usize>, hidden: usize, classes: usize) -> Self {
        assert_eq!(modality_ids.len(), dims.len(), "one dimension per modality");
        NamLayout { modality_ids, dims, hidden, classes }
    }

    pub fn num_modalities(&self) -> usize {
        self.dims.len()
    }

    pub fn all_modalities(&self) -> ModalitySet {
        ModalitySet::full(self.num_modalities())
    }

    /// Length of one shape function's parameter block: `2H + H·C`.
    pub fn shape_len(&self) -> usize {
        2 * self.hidden + self.hidden * self.classes
    }

    pub fn segment_len(&self, m: usize) -> usize {
        self.dims[m] * self.shape_len() + self.classes
    }

    pub fn segment_start(&self, m: usize) -> usize {
        (0..m).map(|i| self.segment_len(i)).sum()
    }

    /// Range of modality `m`'s segment (shape functions and bias).
    pub fn segment_range(&self, m: usize) -> Range<usize> {
        let start = self.segment_start(m);
        start..start + self.segment_len(m)
    }

    /// All segment ranges in modality order; disjoint and covering.
    pub fn segment_ranges(&self) -> Vec<Range<usize>> {
        (0..self.num_modalities()).map(|m| self.segment_range(m)).collect()
    }

    pub fn total_len(&self) -> usize {
        (0..self.num_modalities()).map(|m| self.segment_len(m)).sum()
    }

    /// Offset of feature `j`'s shape block inside modality `m`'s segment.
    pub fn shape_offset(&self, j: usize) -> usize {
        j * self.shape_len()
    }

    /// Offset of the bias inside modality `m`'s segment.
    pub fn bias_offset(&self, m: usize) -> usize {
        self.dims[m] * self.shape_len()
    }

    fn check_available(&self, available: ModalitySet) -> Result<(), NamError> {
        if available.is_empty() {
            return Err(NamError::NoModalities);
        }
        match available.iter().find(|&m| m >= self.num_modalities()) {
            Some(m) => Err(NamError::UnknownModality(m)),
            None => Ok(()),
        }
    }
}

/// Model parameters (also used as a gradient container of the same shape).
#[derive(Debug, Clone, PartialEq)]
pub struct NamParams {
    layout: NamLayout,
    values: Vec<f64>,
}

impl NamParams {
    pub fn zeros(layout: NamLayout) -> Self {
        let n = layout.total_len();
        NamParams { layout, values: vec![0.0; n] }
    }

    /// Random initialization: weights `U(-0.5, 0.5) / sqrt(fan_in)`, biases 0.
    ///
    /// Input weights have fan-in 1 and output weights fan-in `H`.
    pub fn init(layout: NamLayout, rng: &mut SimRng) -> Self {
        let mut p = Self::zeros(layout);
        let h = p.layout.hidden;
        let out_scale = 1.0 / (h as f64).sqrt();
        for m in 0..p.layout.num_modalities() {
            let range = p.layout.segment_range(m);
            let shape_len = p.layout.shape_len();
            let dim = p.layout.dims[m];
            let seg = &mut p.values[range];
            for j in 0..dim {
                let block = &mut seg[j * shape_len..(j + 1) * shape_len];
                for w in &mut block[..h] {
                    *w = rng.random_range(-0.5..0.5);
                }
                for w in &mut block[2 * h..] {
                    *w = rng.random_range(-0.5..0.5) * out_scale;
                }
            }
        }
        p
    }

    pub fn layout(&self) -> &NamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn segment(&self, m: usize) -> &[f64] {
        &self.values[self.layout.segment_range(m)]
    }

    pub fn segment_mut(&mut self, m: usize) -> &mut [f64] {
        let r = self.layout.segment_range(m);
        &mut self.values[r]
    }

    pub fn bias(&self, m: usize) -> &[f64] {
        let off = self.layout.bias_offset(m);
        &self.segment(m)[off..off + self.layout.classes]
    }

    /// Flat copy in the documented layout order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn unflatten(values: Vec<f64>, layout: NamLayout) -> Result<Self, NamError> {
        let expected = layout.total_len();
        if values.len() != expected {
            return Err(NamError::ShapeMismatch { expected, found: values.len() });
        }
        Ok(NamParams { layout, values })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_congruent(&self, other: &NamParams) -> Result<(), NamError> {
        if self.layout != other.layout {
            return Err(NamError::LayoutMismatch);
        }
        Ok(())
    }

    /// In-place `p -= lr * g`, restricted to the modalities in `only`.
    pub fn apply_sgd(&mut self, grads: &NamParams, lr: f64, only: ModalitySet) -> Result<(), NamError> {
        self.check_congruent(grads)?;
        for m in only.iter().filter(|&m| m < self.layout.num_modalities()) {
            let r = self.layout.segment_range(m);
            for (p, g) in self.values[r.clone()].iter_mut().zip(&grads.values[r]) {
                *p -= lr * g;
            }
        }
        Ok(())
    }

    /// Serializes as a JSON layout header line followed by little-endian
    /// `f64` values.
    pub fn to_snapshot(&self) -> Vec<u8> {
        let header = SnapshotHeader {
            format: SNAPSHOT_FORMAT.to_string(),
            version: SNAPSHOT_VERSION,
            layout: self.layout.clone(),
            count: self.values.len(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.reserve(self.values.len() * 8);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_snapshot(bytes: &[u8]) -> Result<Self, NamError> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| NamError::Snapshot("missing header line".into()))?;
        let header: SnapshotHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| NamError::Snapshot(e.to_string()))?;
        if header.format != SNAPSHOT_FORMAT || header.version != SNAPSHOT_VERSION {
            return Err(NamError::Snapshot(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        let body = &bytes[nl + 1..];
        if body.len() != header.count * 8 {
            return Err(NamError::Snapshot(format!(
                "expected {} payload bytes, found {}",
                header.count * 8,
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::unflatten(values, header.layout)
    }
}

pub const SNAPSHOT_FORMAT: &str = "fedmmx-nam-params";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    format: String,
    version: u32,
    layout: NamLayout,
    count: usize,
}

/// `params - lr * grads` over every coordinate.
pub fn sgd_step(params: &NamParams, grads: &NamParams, lr: f64) -> Result<NamParams, NamError> {
    let mut out = params.clone();
    let all = params.layout.all_modalities();
    out.apply_sgd(grads, lr, all)?;
    Ok(out)
}
