//! Query-guided video features via co-attention and a fusion Bi-GRU.
//!
//! For a video stream `V` (`M × D`) and query `Q` (`N × D`):
//!
//! ```text
//! S = V (Q W_S)ᵀ                      M × N
//! A = S_r (Q W_S)                     M × D
//! B = S_r S_cᵀ V                      M × D
//! F = BiGRU([V; A; V⊙A; V⊙B])          M × D
//! ```
//!
//! `S_r` normalizes each row over words, `S_c` each column over frames.

use rand::Rng;

use crate::encoders::BiGru;
use crate::error::{Error, Result};
use crate::numcore::{Graph, ParamId, ParamStore, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionParams {
    pub dim: usize,
    pub w_s: ParamId,
    pub fusion: BiGru,
}

/// Which stream a fused feature matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Anchor,
    /// 1-based siamese index.
    Siamese(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusedFeatures {
    pub features: Var,
    pub stream: Stream,
}

/// Intermediate co-attention products for one stream.
#[derive(Debug, Clone, Copy)]
pub struct CoAttention {
    pub similarity: Var,
    pub row_softmax: Var,
    pub col_softmax: Var,
    pub a: Var,
    pub b: Var,
}

impl InteractionParams {
    pub fn register(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(InteractionParams {
            dim,
            w_s: store.add_glorot(format!("{prefix}.w_s"), dim, dim, rng)?,
            fusion: BiGru::register(store, &format!("{prefix}.fusion"), 4 * dim, dim, rng)?,
        })
    }

    fn check(&self, g: &Graph, v: Var, q: Var) -> Result<()> {
        let (vs, qs) = (g.value(v).shape(), g.value(q).shape());
        if vs.1 != self.dim || qs.1 != self.dim {
            return Err(Error::shape("interaction", vs, qs));
        }
        Ok(())
    }

    /// `Q W_S`, shared by every stream.
    pub fn project_query(&self, g: &mut Graph, store: &ParamStore, q: Var) -> Result<Var> {
        let w = g.param(store, self.w_s);
        g.matmul(q, w)
    }

    /// `S = V (Q W_S)ᵀ`.
    pub fn similarity(&self, g: &mut Graph, store: &ParamStore, v: Var, q: Var) -> Result<Var> {
        self.check(g, v, q)?;
        let qw = self.project_query(g, store, q)?;
        g.matmul_nt(v, qw)
    }

    /// Computes `S`, both softmaxes and the attention products `A` and `B`
    /// given the projected query `Q W_S`.
    pub fn coattend(&self, g: &mut Graph, v: Var, qw: Var) -> Result<CoAttention> {
        let similarity = g.matmul_nt(v, qw)?;
        let row_softmax = g.softmax_rows(similarity);
        let col_softmax = g.softmax_cols(similarity);
        let a = g.matmul(row_softmax, qw)?;
        let frames = g.matmul_nt(row_softmax, col_softmax)?;
        let b = g.matmul(frames, v)?;
        Ok(CoAttention {
            similarity,
            row_softmax,
            col_softmax,
            a,
            b,
        })
    }

    /// `[V; A; V⊙A; V⊙B]`, the fusion Bi-GRU input.
    pub fn fusion_input(&self, g: &mut Graph, v: Var, att: &CoAttention) -> Result<Var> {
        let va = g.mul(v, att.a)?;
        let vb = g.mul(v, att.b)?;
        g.concat_cols(&[v, att.a, va, vb])
    }

    /// Fuses every stream with the same query and parameters. `streams[0]` is
    /// the anchor; the rest are siamese streams in order.
    pub fn fuse_streams(&self, g: &mut Graph, store: &ParamStore, streams: &[Var], q: Var) -> Result<Vec<FusedFeatures>> {
        let Some(&first) = streams.first() else {
            return Ok(Vec::new());
        };
        self.check(g, first, q)?;
        let qw = self.project_query(g, store, q)?;
        let mut inputs = Vec::with_capacity(streams.len());
        for &v in streams {
            self.check(g, v, q)?;
            let att = self.coattend(g, v, qw)?;
            inputs.push(self.fusion_input(g, v, &att)?);
        }
        let fused = self.fusion.run(g, store, &inputs)?;
        Ok(fused
            .into_iter()
            .enumerate()
            .map(|(i, features)| FusedFeatures {
                features,
                stream: if i == 0 { Stream::Anchor } else { Stream::Siamese(i) },
            })
            .collect())
    }
}
