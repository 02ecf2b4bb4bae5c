//! Inference over sample sets: predictions, metrics and mean losses.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::GroundingSample;
use crate::error::{Error, Result};
use crate::heads::{compute_losses, decode_top_n, LossBundle, SegmentPrediction};
use crate::model::{SpanModel, Ssrn};
use crate::training::metrics::{iou, recall_at, MetricsReport, RecallEntry, RECALL_IOUS, RECALL_NS};

/// Candidates kept per sample; R@1 reads rank 1 of the same list.
pub const TOP_N: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRecord {
    pub id: String,
    pub segments: Vec<SegmentPrediction>,
}

pub fn predict(model: &impl SpanModel, samples: &[GroundingSample], n: usize) -> Result<Vec<PredictionRecord>> {
    samples
        .par_iter()
        .map(|s| {
            let inf = model.infer(s).map_err(|e| e.in_sample(&s.id))?;
            let segments = decode_top_n(&inf.dists, n)
                .iter()
                .map(|c| SegmentPrediction::build(c, &inf.offsets, &s.plan))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.in_sample(&s.id))?;
            Ok(PredictionRecord {
                id: s.id.clone(),
                segments,
            })
        })
        .collect()
}

/// Decodes the top five pairs per sample and scores them against the
/// original-time annotations. `refined` selects offset-refined boundaries
/// for the recall table and mean IoU; both boundary errors are always reported.
pub fn evaluate(model: &impl SpanModel, samples: &[GroundingSample], refined: bool) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Validation("evaluation set is empty".into()));
    }
    let records = predict(model, samples, TOP_N)?;
    let truths: Vec<(f64, f64)> = samples.iter().map(|s| (s.annotation.start, s.annotation.end)).collect();
    let scored: Vec<Vec<(f64, f64)>> = records
        .iter()
        .map(|r| {
            r.segments
                .iter()
                .map(|p| if refined { p.time } else { p.hard_time })
                .collect()
        })
        .collect();
    let mut recalls = Vec::new();
    for n in RECALL_NS {
        for m in RECALL_IOUS {
            recalls.push(RecallEntry {
                n,
                iou: m,
                recall: recall_at(&scored, &truths, n, m)?,
            });
        }
    }
    let mut iou_sum = 0.0;
    let mut hard_err = 0.0;
    let mut soft_err = 0.0;
    for ((rec, list), truth) in records.iter().zip(&scored).zip(&truths) {
        let top = &rec.segments[0];
        iou_sum += iou(list[0], *truth)?;
        hard_err += (top.hard_time.0 - truth.0).abs() + (top.hard_time.1 - truth.1).abs();
        soft_err += (top.time.0 - truth.0).abs() + (top.time.1 - truth.1).abs();
    }
    let n = samples.len() as f64;
    Ok(MetricsReport {
        samples: samples.len(),
        refined,
        recalls,
        mean_iou: iou_sum / n,
        mean_boundary_error_hard: hard_err / (2.0 * n),
        mean_boundary_error_refined: soft_err / (2.0 * n),
    })
}

/// Mean `L₁`, `L₂` and total over a sample set.
pub fn mean_losses(model: &Ssrn, samples: &[GroundingSample]) -> Result<LossBundle> {
    if samples.is_empty() {
        return Err(Error::Validation("loss over an empty set".into()));
    }
    let bundles = samples
        .par_iter()
        .map(|s| {
            let inf = model.infer(s)?;
            compute_losses(&inf.dists, &inf.offsets, &s.labels, model.config.lambda)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = bundles.len() as f64;
    let l1 = bundles.iter().map(|b| b.l1).sum::<f64>() / n;
    let l2 = if model.config.soft_label {
        bundles.iter().map(|b| b.l2).sum::<f64>() / n
    } else {
        0.0
    };
    Ok(LossBundle {
        l1,
        l2,
        total: l1 + model.config.lambda * l2,
    })
}
