//! Siamese knowledge aggregation and reasoning.
//!
//! Aggregation scores every anchor frame against the same frame of each
//! siamese stream (cosine similarity, then a softmax over the `K` streams),
//! giving a row-stochastic `M × K` matrix `C`. Reasoning merges the weighted
//! siamese features back into the anchor stream:
//!
//! ```text
//! F̃ᵃ = α · Σ_k C(:,k) ⊙ (Fˢᵏ W₁) + (1 − α) · Fᵃ W₂
//! ```
//!
//! `α = 1` drops the residual branch and leaves the pure propagation form.
//! The ablation variants replace `C` by a uniform average and/or the
//! residual merge by a projection of `[Fᵃ ; Σ_k C(:,k) ⊙ Fˢᵏ]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Graph, Matrix, ParamId, ParamStore, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    /// Cosine affinities with a softmax over streams.
    #[default]
    Affinity,
    /// Uniform `1/K` weights.
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningMode {
    /// α-weighted residual merge with `W₁`, `W₂`.
    #[default]
    Residual,
    /// `[Fᵃ ; aggregated] W_cat`.
    Concat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiameseParams {
    pub dim: usize,
    pub alpha: f64,
    pub mode: ReasoningMode,
    pub w1: ParamId,
    pub w2: ParamId,
    pub w_cat: Option<ParamId>,
}

/// Row-stochastic `M × K` affinity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationWeights(Matrix);

impl AggregationWeights {
    pub fn new(m: Matrix) -> Result<Self> {
        for r in 0..m.rows() {
            let row = m.row(r);
            if row.iter().any(|&v| v < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::Validation(format!("aggregation row {r} is not a probability vector")));
            }
        }
        Ok(AggregationWeights(m))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

fn check_streams(g: &Graph, anchor: Var, siamese: &[Var]) -> Result<()> {
    if siamese.is_empty() {
        return Err(Error::Validation("siamese aggregation needs K >= 1 streams".into()));
    }
    let shape = g.value(anchor).shape();
    for &s in siamese {
        if g.value(s).shape() != shape {
            return Err(Error::shape("siamese", shape, g.value(s).shape()));
        }
    }
    Ok(())
}

/// `C(i,k) = softmax_k cos(Fᵃᵢ, Fˢᵏᵢ)`, as an `M × K` node.
pub fn aggregate(g: &mut Graph, anchor: Var, siamese: &[Var]) -> Result<Var> {
    check_streams(g, anchor, siamese)?;
    let cols = siamese
        .iter()
        .map(|&s| g.cosine_rows(anchor, s))
        .collect::<Result<Vec<_>>>()?;
    let cos = g.concat_cols(&cols)?;
    Ok(g.softmax_rows(cos))
}

/// Uniform `1/K` weights in the same `M × K` layout as [`aggregate`].
pub fn average_weights(g: &mut Graph, anchor: Var, siamese: &[Var]) -> Result<Var> {
    check_streams(g, anchor, siamese)?;
    let m = g.value(anchor).rows();
    let k = siamese.len();
    Ok(g.constant(Matrix::filled(m, k, 1.0 / k as f64)))
}

/// Value-level [`aggregate`].
pub fn aggregate_values(anchor: &Matrix, siamese: &[Matrix]) -> Result<AggregationWeights> {
    let mut g = Graph::new();
    let a = g.constant(anchor.clone());
    let s: Vec<Var> = siamese.iter().map(|m| g.constant(m.clone())).collect();
    let c = aggregate(&mut g, a, &s)?;
    AggregationWeights::new(g.value(c).clone())
}

impl SiameseParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        alpha: f64,
        mode: ReasoningMode,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Validation(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        let w1 = store.add_glorot(format!("{prefix}.w1"), dim, dim, rng)?;
        let w2 = store.add_glorot(format!("{prefix}.w2"), dim, dim, rng)?;
        let w_cat = match mode {
            ReasoningMode::Residual => None,
            ReasoningMode::Concat => Some(store.add_glorot(format!("{prefix}.w_cat"), 2 * dim, dim, rng)?),
        };
        Ok(SiameseParams {
            dim,
            alpha,
            mode,
            w1,
            w2,
            w_cat,
        })
    }

    /// Merges siamese knowledge into the anchor stream using weights `c` (`M × K`).
    pub fn reason(&self, g: &mut Graph, store: &ParamStore, anchor: Var, siamese: &[Var], c: Var) -> Result<Var> {
        check_streams(g, anchor, siamese)?;
        let (m, _) = g.value(anchor).shape();
        if g.value(c).shape() != (m, siamese.len()) {
            return Err(Error::shape("siamese reason", (m, siamese.len()), g.value(c).shape()));
        }
        match self.mode {
            ReasoningMode::Residual => {
                let w1 = g.param(store, self.w1);
                let w2 = g.param(store, self.w2);
                let propagated = self.weighted_sum(g, siamese, c, Some(w1))?;
                let residual = g.matmul(anchor, w2)?;
                let p = g.scale(propagated, self.alpha);
                let r = g.scale(residual, 1.0 - self.alpha);
                g.add(p, r)
            }
            ReasoningMode::Concat => {
                let w_cat = self
                    .w_cat
                    .ok_or_else(|| Error::Contract("concat reasoning without W_cat".into()))?;
                let w = g.param(store, w_cat);
                let merged = self.weighted_sum(g, siamese, c, None)?;
                let both = g.concat_cols(&[anchor, merged])?;
                g.matmul(both, w)
            }
        }
    }

    fn weighted_sum(&self, g: &mut Graph, siamese: &[Var], c: Var, proj: Option<Var>) -> Result<Var> {
        let mut total: Option<Var> = None;
        for (k, &s) in siamese.iter().enumerate() {
            let stream = match proj {
                Some(w) => g.matmul(s, w)?,
                None => s,
            };
            let weight = g.slice_cols(c, k, 1)?;
            let term = g.scale_rows(stream, weight)?;
            total = Some(match total {
                Some(t) => g.add(t, term)?,
                None => term,
            });
        }
        Ok(total.expect("at least one siamese stream"))
    }
}
