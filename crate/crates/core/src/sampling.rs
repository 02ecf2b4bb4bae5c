//! Anchor/siamese frame sampling and boundary label construction.
//!
//! A dense video of `T` frames is reduced to `M` evenly spaced anchor frames,
//! `aᵢ = ⌊i·T/M⌋`. Each of the `K` siamese sequences reuses the anchor grid
//! shifted right by a small per-sequence offset. Ground-truth timestamps map
//! onto the sparse grid both as rounded indices (what classic span heads are
//! trained on) and as exact real positions, and the difference between the
//! two is expressed as offset targets that the refinement step inverts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::metrics::iou;

/// Largest end-offset target; `Y′_e` lives in `[1, 2)`.
pub const END_OFFSET_CAP: f64 = 2.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffsetMode {
    /// `δ_k = k`: siamese frames sit right next to their anchor.
    #[default]
    Adjacent,
    /// `δ_k = ⌊k·stride/(K+1)⌋`: siamese frames spread across the stride.
    Spread,
}

impl std::str::FromStr for OffsetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjacent" => Ok(OffsetMode::Adjacent),
            "spread" => Ok(OffsetMode::Spread),
            other => Err(Error::Config(format!("unknown siamese offset mode {other:?} (adjacent|spread)"))),
        }
    }
}

impl std::fmt::Display for OffsetMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OffsetMode::Adjacent => "adjacent",
            OffsetMode::Spread => "spread",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplingPlan {
    frames: usize,
    length: usize,
    siamese: usize,
    stride: f64,
    offsets: Vec<usize>,
}

impl SamplingPlan {
    /// Plan for a `frames`-long video sampled to `length` anchor frames with
    /// `siamese` extra sequences.
    pub fn new(frames: usize, length: usize, siamese: usize, mode: OffsetMode) -> Result<Self> {
        if length < 2 || frames < length {
            return Err(Error::Validation(format!(
                "sampling plan needs T >= M >= 2, got T={frames}, M={length}"
            )));
        }
        let stride = frames as f64 / length as f64;
        let max_offset = (stride.floor() as usize).max(1);
        let offsets = (1..=siamese)
            .map(|k| {
                let raw = match mode {
                    OffsetMode::Adjacent => k,
                    OffsetMode::Spread => (k as f64 * stride / (siamese + 1) as f64).floor() as usize,
                };
                raw.clamp(1, max_offset)
            })
            .collect();
        Ok(SamplingPlan {
            frames,
            length,
            siamese,
            stride,
            offsets,
        })
    }

    /// Dense frame count `T`.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Sampled length `M`.
    pub fn length(&self) -> usize {
        self.length
    }

    /// Siamese sequence count `K`.
    pub fn siamese(&self) -> usize {
        self.siamese
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    /// `δ_1..δ_K` after clamping.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn anchor_indices(&self) -> Vec<usize> {
        (0..self.length).map(|i| i * self.frames / self.length).collect()
    }

    /// Indices of siamese sequence `k` (1-based), clamped to the last frame.
    pub fn siamese_indices(&self, k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.siamese {
            return Err(Error::Index {
                what: "siamese sequences (1-based)",
                index: k,
                len: self.siamese,
            });
        }
        let delta = self.offsets[k - 1];
        Ok(self
            .anchor_indices()
            .into_iter()
            .map(|a| (a + delta).min(self.frames - 1))
            .collect())
    }

    pub fn map_boundary(&self, ann: &BoundaryAnnotation) -> Result<BoundaryLabels> {
        ann.validate(self.frames)?;
        let m = self.length;
        let soft_start = self.to_sampled(ann.start);
        let soft_end = self.to_sampled(ann.end);
        let hard_start = (soft_start.floor() as usize).min(m - 1);
        let mut hard_end = (soft_end.floor() as usize).min(m - 1);
        if hard_start > hard_end {
            hard_end = hard_start;
        }
        let offset_start = hard_start as f64 + 1.0 - soft_start;
        let offset_end = (soft_end - hard_end as f64 + 1.0).min(END_OFFSET_CAP);
        Ok(BoundaryLabels {
            hard_start,
            hard_end,
            soft_start,
            soft_end,
            offset_start,
            offset_end,
        })
    }

    /// `τ/T×M` without validation.
    pub fn to_sampled(&self, time: f64) -> f64 {
        time / self.frames as f64 * self.length as f64
    }

    /// Sampled-grid position back to dense-frame time: `idx/M×T`.
    pub fn unmap_index(&self, idx: f64) -> Result<f64> {
        if !(0.0..=self.length as f64).contains(&idx) {
            return Err(Error::Validation(format!(
                "sampled index {idx} outside [0, {}]",
                self.length
            )));
        }
        Ok(idx / self.length as f64 * self.frames as f64)
    }
}

/// Ground-truth segment in dense-frame units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryAnnotation {
    pub start: f64,
    pub end: f64,
}

impl BoundaryAnnotation {
    pub fn new(start: f64, end: f64) -> Self {
        BoundaryAnnotation { start, end }
    }

    pub fn validate(&self, frames: usize) -> Result<()> {
        let t = frames as f64;
        if !(self.start.is_finite() && self.end.is_finite()) || self.start < 0.0 || self.start > self.end || self.end > t {
            return Err(Error::Validation(format!(
                "annotation ({}, {}) violates 0 <= start <= end <= {t}",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

/// Hard indices, soft positions and offset targets for one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryLabels {
    pub hard_start: usize,
    pub hard_end: usize,
    pub soft_start: f64,
    pub soft_end: f64,
    /// `τ̂_s + 1 − τ̃_s`.
    pub offset_start: f64,
    /// `τ̃_e − τ̂_e + 1`.
    pub offset_end: f64,
}

pub const BIAS_HISTOGRAM_BUCKETS: usize = 10;

/// Round-trip quality of hard (rounded) labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasReport {
    pub count: usize,
    pub ious: Vec<f64>,
    pub mean_iou: f64,
    pub min_iou: f64,
    /// Largest `|τ − unmap(τ̂)|` over both boundaries, in dense frames.
    pub max_drift: f64,
    /// Mean of `|τ − unmap(τ̂)|` over all boundaries.
    pub mean_drift: f64,
    /// IoU counts in equal-width buckets over `[0, 1]`; 1.0 lands in the last.
    pub histogram: Vec<usize>,
}

pub fn bias_report(annotations: &[BoundaryAnnotation], plan: &SamplingPlan) -> Result<BiasReport> {
    let items: Vec<_> = annotations.iter().map(|a| (*a, plan.clone())).collect();
    bias_report_per_video(&items)
}

/// Like [`bias_report`] but with a plan per annotation (videos of different length).
pub fn bias_report_per_video(items: &[(BoundaryAnnotation, SamplingPlan)]) -> Result<BiasReport> {
    if items.is_empty() {
        return Err(Error::Validation("bias report needs at least one annotation".into()));
    }
    let mut ious = Vec::with_capacity(items.len());
    let mut max_drift: f64 = 0.0;
    let mut drift_sum = 0.0;
    let mut histogram = vec![0; BIAS_HISTOGRAM_BUCKETS];
    for (ann, plan) in items {
        let labels = plan.map_boundary(ann)?;
        let start = plan.unmap_index(labels.hard_start as f64)?;
        let end = plan.unmap_index(labels.hard_end as f64)?;
        let value = iou((ann.start, ann.end), (start, end))?;
        let ds = (ann.start - start).abs();
        let de = (ann.end - end).abs();
        max_drift = max_drift.max(ds).max(de);
        drift_sum += ds + de;
        let bucket = ((value * BIAS_HISTOGRAM_BUCKETS as f64) as usize).min(BIAS_HISTOGRAM_BUCKETS - 1);
        histogram[bucket] += 1;
        ious.push(value);
    }
    let count = ious.len();
    Ok(BiasReport {
        count,
        mean_iou: ious.iter().sum::<f64>() / count as f64,
        min_iou: ious.iter().copied().fold(f64::INFINITY, f64::min),
        max_drift,
        mean_drift: drift_sum / (2 * count) as f64,
        histogram,
        ious,
    })
}
