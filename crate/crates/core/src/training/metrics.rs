//! Temporal IoU and `R@n, IoU=m` recall.

use serde::Serialize;

use crate::error::{Error, Result};

/// Intersection over union of two closed intervals. Two identical
/// zero-length intervals score 1; any other zero-length union scores 0.
pub fn iou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    for (s, e) in [a, b] {
        if !(s <= e) {
            return Err(Error::Validation(format!("interval start {s} > end {e}")));
        }
    }
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = a.1.max(b.1) - a.0.min(b.0);
    if union <= 0.0 {
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Percentage of samples whose top-`n` predictions contain at least one
/// segment with IoU ≥ `m` against the ground truth.
pub fn recall_at(predictions: &[Vec<(f64, f64)>], truths: &[(f64, f64)], n: usize, m: f64) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Validation(format!(
            "{} prediction lists for {} ground truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::Validation("recall over an empty set".into()));
    }
    let mut hits = 0usize;
    for (preds, &truth) in predictions.iter().zip(truths) {
        let mut hit = false;
        for &p in preds.iter().take(n) {
            if iou(p, truth)? >= m {
                hit = true;
                break;
            }
        }
        hits += usize::from(hit);
    }
    Ok(100.0 * hits as f64 / truths.len() as f64)
}

pub const RECALL_NS: [usize; 2] = [1, 5];
pub const RECALL_IOUS: [f64; 3] = [0.3, 0.5, 0.7];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallEntry {
    pub n: usize,
    pub iou: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub samples: usize,
    /// Whether the scored boundaries used offset refinement.
    pub refined: bool,
    pub recalls: Vec<RecallEntry>,
    /// Mean top-1 IoU of the scored boundaries.
    pub mean_iou: f64,
    /// Mean `|τ' − τ|` over both boundaries of the top-1 hard-decoded segment, dense frames.
    pub mean_boundary_error_hard: f64,
    /// Same, for the offset-refined top-1 segment.
    pub mean_boundary_error_refined: f64,
}

impl MetricsReport {
    pub fn recall(&self, n: usize, iou: f64) -> Option<f64> {
        self.recalls
            .iter()
            .find(|r| r.n == n && (r.iou - iou).abs() < 1e-12)
            .map(|r| r.recall)
    }

    pub fn table(&self) -> String {
        let mut out = String::from("metric            value\n");
        for r in &self.recalls {
            out.push_str(&format!("R@{},IoU={:<5}    {:>7.2}\n", r.n, r.iou, r.recall));
        }
        out.push_str(&format!("mean IoU          {:>7.4}\n", self.mean_iou));
        out.push_str(&format!("boundary err hard {:>7.4}\n", self.mean_boundary_error_hard));
        out.push_str(&format!("boundary err soft {:>7.4}\n", self.mean_boundary_error_refined));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_examples() {
        assert_eq!(iou((2.0, 7.0), (2.0, 7.0)).unwrap(), 1.0);
        assert_eq!(iou((0.0, 1.0), (2.0, 3.0)).unwrap(), 0.0);
        assert!((iou((0.0, 10.0), (5.0, 15.0)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou((4.0, 4.0), (4.0, 4.0)).unwrap(), 1.0);
        assert_eq!(iou((4.0, 4.0), (5.0, 5.0)).unwrap(), 0.0);
        assert!(iou((3.0, 2.0), (0.0, 1.0)).is_err());
    }

    #[test]
    fn recall_examples() {
        let truths = vec![(0.0, 10.0), (10.0, 20.0), (0.0, 4.0), (5.0, 9.0)];
        let exact: Vec<_> = truths.iter().map(|&t| vec![t]).collect();
        assert_eq!(recall_at(&exact, &truths, 1, 0.7).unwrap(), 100.0);

        let half = vec![vec![(0.0, 10.0)], vec![(10.0, 20.0)], vec![(10.0, 14.0)], vec![(0.0, 1.0)]];
        assert_eq!(recall_at(&half, &truths, 1, 0.5).unwrap(), 50.0);

        let late = vec![vec![(50.0, 60.0), (40.0, 45.0), (30.0, 31.0), (0.0, 10.0), (70.0, 80.0)]];
        assert_eq!(recall_at(&late, &[(0.0, 10.0)], 5, 0.5).unwrap(), 100.0);
        assert_eq!(recall_at(&late, &[(0.0, 10.0)], 1, 0.5).unwrap(), 0.0);

        assert!(recall_at(&half, &truths[..3], 1, 0.5).is_err());
    }
}
