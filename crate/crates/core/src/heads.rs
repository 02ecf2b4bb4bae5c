//! Grounding heads: stacked-LSTM span predictor, sub-frame offset head,
//! constrained top-n decoding, refinement and the two training losses.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numcore::{ops, Graph, Matrix, ParamId, ParamStore, Var};
use crate::sampling::{BoundaryLabels, SamplingPlan};

/// Unidirectional LSTM (`i, f, g, o` gates).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input: usize,
    pub hidden: usize,
    /// Input weights for `i, f, g, o`.
    pub w: [ParamId; 4],
    /// Recurrent weights for `i, f, g, o`.
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
}

impl LstmParams {
    pub fn register(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let gates = ["i", "f", "g", "o"];
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for gate in gates {
            w.push(store.add_glorot(format!("{prefix}.w_{gate}"), input, hidden, rng)?);
            u.push(store.add_glorot(format!("{prefix}.u_{gate}"), hidden, hidden, rng)?);
            b.push(store.add_zeros(format!("{prefix}.b_{gate}"), 1, hidden)?);
        }
        Ok(LstmParams {
            input,
            hidden,
            w: w.try_into().expect("four gates"),
            u: u.try_into().expect("four gates"),
            b: b.try_into().expect("four gates"),
        })
    }

    /// Runs over an `L × input` sequence, returning the `L × hidden` states.
    pub fn run(&self, g: &mut Graph, store: &ParamStore, seq: Var) -> Result<Var> {
        let (len, width) = g.value(seq).shape();
        if width != self.input || len == 0 {
            return Err(Error::shape("lstm", (len.max(1), self.input), (len, width)));
        }
        let mut proj = [seq; 4];
        for (k, slot) in proj.iter_mut().enumerate() {
            let w = g.param(store, self.w[k]);
            let b = g.param(store, self.b[k]);
            let xw = g.matmul(seq, w)?;
            *slot = g.add_row(xw, b)?;
        }
        let u: Vec<Var> = self.u.iter().map(|&id| g.param(store, id)).collect();
        let mut h = g.constant(Matrix::zeros(1, self.hidden));
        let mut c = h;
        let mut states = Vec::with_capacity(len);
        for t in 0..len {
            let mut pre = [h; 4];
            for k in 0..4 {
                let x_t = g.gather_rows(proj[k], &[t])?;
                let hu = g.matmul(h, u[k])?;
                pre[k] = g.add(x_t, hu)?;
            }
            let i = g.sigmoid(pre[0]);
            let f = g.sigmoid(pre[1]);
            let cand = g.tanh(pre[2]);
            let o = g.sigmoid(pre[3]);
            let keep = g.mul(f, c)?;
            let write = g.mul(i, cand)?;
            c = g.add(keep, write)?;
            let squashed = g.tanh(c);
            h = g.mul(o, squashed)?;
            states.push(h);
        }
        g.concat_rows(&states)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanPredictorParams {
    pub dim: usize,
    pub start_lstm: LstmParams,
    /// Consumes the start LSTM's hidden states.
    pub end_lstm: LstmParams,
    pub start_w: ParamId,
    pub start_b: ParamId,
    pub end_w: ParamId,
    pub end_b: ParamId,
    /// `D × 2`: columns are the start and end offsets.
    pub offset_w: ParamId,
    pub offset_b: ParamId,
}

/// Per-frame start/end logits, each `M × 1`.
#[derive(Debug, Clone, Copy)]
pub struct SpanLogits {
    pub start: Var,
    pub end: Var,
}

impl SpanPredictorParams {
    pub fn register(store: &mut ParamStore, prefix: &str, dim: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(SpanPredictorParams {
            dim,
            start_lstm: LstmParams::register(store, &format!("{prefix}.start_lstm"), dim, hidden, rng)?,
            end_lstm: LstmParams::register(store, &format!("{prefix}.end_lstm"), hidden, hidden, rng)?,
            start_w: store.add_glorot(format!("{prefix}.start_ff.w"), hidden, 1, rng)?,
            start_b: store.add_zeros(format!("{prefix}.start_ff.b"), 1, 1)?,
            end_w: store.add_glorot(format!("{prefix}.end_ff.w"), hidden, 1, rng)?,
            end_b: store.add_zeros(format!("{prefix}.end_ff.b"), 1, 1)?,
            offset_w: store.add_glorot(format!("{prefix}.offset_ff.w"), dim, 2, rng)?,
            offset_b: store.add(format!("{prefix}.offset_ff.b"), Matrix::row_vector(&[0.5, 1.5]))?,
        })
    }

    fn check(&self, g: &Graph, features: Var) -> Result<()> {
        let shape = g.value(features).shape();
        if shape.1 != self.dim || shape.0 < 2 {
            return Err(Error::shape("span predictor", (shape.0.max(2), self.dim), shape));
        }
        Ok(())
    }

    pub fn span_logits(&self, g: &mut Graph, store: &ParamStore, features: Var) -> Result<SpanLogits> {
        self.check(g, features)?;
        let hs = self.start_lstm.run(g, store, features)?;
        let he = self.end_lstm.run(g, store, hs)?;
        let linear = |g: &mut Graph, x: Var, w: ParamId, b: ParamId| -> Result<Var> {
            let wv = g.param(store, w);
            let bv = g.param(store, b);
            let xw = g.matmul(x, wv)?;
            g.add_row(xw, bv)
        };
        Ok(SpanLogits {
            start: linear(g, hs, self.start_w, self.start_b)?,
            end: linear(g, he, self.end_w, self.end_b)?,
        })
    }

    /// Raw per-frame offsets, `M × 2` (start, end).
    pub fn offsets(&self, g: &mut Graph, store: &ParamStore, features: Var) -> Result<Var> {
        self.check(g, features)?;
        let w = g.param(store, self.offset_w);
        let b = g.param(store, self.offset_b);
        let xw = g.matmul(features, w)?;
        g.add_row(xw, b)
    }
}

/// Start/end probability vectors over the `M` sampled frames.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanDistributions {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl SpanDistributions {
    pub fn new(start: Vec<f64>, end: Vec<f64>) -> Result<Self> {
        if start.len() != end.len() || start.is_empty() {
            return Err(Error::shape("span distributions", (1, start.len()), (1, end.len())));
        }
        for (name, p) in [("start", &start), ("end", &end)] {
            if p.iter().any(|&v| !(v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!("{name} distribution is not a probability vector")));
            }
        }
        Ok(SpanDistributions { start, end })
    }

    pub fn from_logits(start: &[f64], end: &[f64]) -> Result<Self> {
        Self::new(ops::softmax(start), ops::softmax(end))
    }

    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }

    /// Distributions concentrated on the given frames.
    pub fn one_hot(len: usize, start: usize, end: usize) -> Result<Self> {
        if start >= len || end >= len {
            return Err(Error::Index {
                what: "span distribution",
                index: start.max(end),
                len,
            });
        }
        let mut s = vec![0.0; len];
        let mut e = vec![0.0; len];
        s[start] = 1.0;
        e[end] = 1.0;
        Ok(SpanDistributions { start: s, end: e })
    }
}

/// Per-frame offset predictions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffsetPredictions {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl OffsetPredictions {
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if m.cols() != 2 {
            return Err(Error::shape("offset predictions", (m.rows(), 2), m.shape()));
        }
        Ok(OffsetPredictions {
            start: m.column(0),
            end: m.column(1),
        })
    }

    /// `O_s ≡ 1`, `O_e ≡ 1`: refinement returns the hard pair unchanged.
    pub fn neutral(len: usize) -> Self {
        OffsetPredictions {
            start: vec![1.0; len],
            end: vec![1.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }
}

/// A hard `(start, end)` frame pair with its joint probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpanCandidate {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

impl SpanCandidate {
    /// Total order used for ranking: higher score first, then smaller start,
    /// then smaller end.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.start.cmp(&other.start))
            .then(self.end.cmp(&other.end))
    }
}

struct Ranked(SpanCandidate);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    // Greater = ranked later, so the heap top is the weakest kept candidate.
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank_cmp(&other.0)
    }
}

/// The `n` best pairs with `start ≤ end` under `P_s(start)·P_e(end)`.
pub fn decode_top_n(dists: &SpanDistributions, n: usize) -> Vec<SpanCandidate> {
    let m = dists.len();
    let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(n + 1);
    if n == 0 {
        return Vec::new();
    }
    for (s, &ps) in dists.start.iter().enumerate() {
        for e in s..m {
            let cand = Ranked(SpanCandidate {
                start: s,
                end: e,
                score: ps * dists.end[e],
            });
            if heap.len() < n {
                heap.push(cand);
            } else if let Some(worst) = heap.peek() {
                if cand < *worst {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
    }
    heap.into_sorted_vec().into_iter().map(|r| r.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinedPair {
    pub start: f64,
    pub end: f64,
    /// Offsets pushed start past end and the pair was collapsed.
    pub clamped: bool,
}

/// `(ŝ + 1 − O_s(ŝ), ê − 1 + O_e(ê))`, clamped into `[0, M]` with `start ≤ end`.
pub fn refine(start: usize, end: usize, offsets: &OffsetPredictions) -> Result<RefinedPair> {
    let m = offsets.len();
    if start >= m || end >= m {
        return Err(Error::Index {
            what: "offset predictions",
            index: start.max(end),
            len: m,
        });
    }
    let upper = m as f64;
    let mut s = (start as f64 + 1.0 - offsets.start[start]).clamp(0.0, upper);
    let e = (end as f64 - 1.0 + offsets.end[end]).clamp(0.0, upper);
    let clamped = s > e;
    if clamped {
        s = e;
    }
    Ok(RefinedPair {
        start: s,
        end: e,
        clamped,
    })
}

/// One decoded segment in all three coordinate systems.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentPrediction {
    pub hard: (usize, usize),
    pub refined: (f64, f64),
    /// Refined pair mapped back to dense-frame time.
    pub time: (f64, f64),
    /// Hard pair mapped back to dense-frame time.
    pub hard_time: (f64, f64),
    pub score: f64,
    pub clamped: bool,
}

impl SegmentPrediction {
    pub fn build(cand: &SpanCandidate, offsets: &OffsetPredictions, plan: &SamplingPlan) -> Result<Self> {
        let r = refine(cand.start, cand.end, offsets)?;
        Ok(SegmentPrediction {
            hard: (cand.start, cand.end),
            refined: (r.start, r.end),
            time: (plan.unmap_index(r.start)?, plan.unmap_index(r.end)?),
            hard_time: (plan.unmap_index(cand.start as f64)?, plan.unmap_index(cand.end as f64)?),
            score: cand.score,
            clamped: r.clamped,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBundle {
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
}

fn check_labels(labels: &BoundaryLabels, m: usize) -> Result<()> {
    if labels.hard_start >= m || labels.hard_end >= m {
        return Err(Error::Validation(format!(
            "label indices ({}, {}) outside [0, {}]",
            labels.hard_start,
            labels.hard_end,
            m.saturating_sub(1)
        )));
    }
    Ok(())
}

/// Value-level losses from probabilities: `L₁ = −ln P_s(τ̂_s) − ln P_e(τ̂_e)`,
/// `L₂` = smooth-L1 of the offsets at the label frames against `Y′`.
pub fn compute_losses(
    dists: &SpanDistributions,
    offsets: &OffsetPredictions,
    labels: &BoundaryLabels,
    lambda: f64,
) -> Result<LossBundle> {
    let m = dists.len();
    check_labels(labels, m)?;
    if offsets.len() != m {
        return Err(Error::shape("compute_losses", (m, 2), (offsets.len(), 2)));
    }
    let l1 = -dists.start[labels.hard_start].ln() - dists.end[labels.hard_end].ln();
    let l2 = ops::smooth_l1(
        &[offsets.start[labels.hard_start], offsets.end[labels.hard_end]],
        &[labels.offset_start, labels.offset_end],
    )?;
    Ok(LossBundle {
        l1,
        l2,
        total: l1 + lambda * l2,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub l1: Var,
    pub l2: Option<Var>,
    pub total: Var,
}

/// Differentiable losses on the graph. `offsets` is `None` when soft-label
/// supervision is disabled.
pub fn loss_nodes(
    g: &mut Graph,
    logits: &SpanLogits,
    offsets: Option<Var>,
    labels: &BoundaryLabels,
    lambda: f64,
) -> Result<LossNodes> {
    let m = g.value(logits.start).len();
    check_labels(labels, m)?;
    let ce_s = g.cross_entropy(logits.start, labels.hard_start)?;
    let ce_e = g.cross_entropy(logits.end, labels.hard_end)?;
    let l1 = g.add(ce_s, ce_e)?;
    let Some(offsets) = offsets else {
        return Ok(LossNodes { l1, l2: None, total: l1 });
    };
    let os = g.pick(offsets, labels.hard_start, 0)?;
    let oe = g.pick(offsets, labels.hard_end, 1)?;
    let picked = g.concat_cols(&[os, oe])?;
    let l2 = g.smooth_l1(picked, &[labels.offset_start, labels.offset_end])?;
    let weighted = g.scale(l2, lambda);
    let total = g.add(l1, weighted)?;
    Ok(LossNodes {
        l1,
        l2: Some(l2),
        total,
    })
}
