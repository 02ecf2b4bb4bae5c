//! The assembled network: encoders, co-attention, siamese reasoning and heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::GroundingSample;
use crate::encoders::EncoderParams;
use crate::error::{Error, Result};
use crate::heads::{loss_nodes, LossNodes, OffsetPredictions, SpanDistributions, SpanLogits, SpanPredictorParams};
use crate::interaction::InteractionParams;
use crate::numcore::{Graph, ParamStore, Var};
use crate::sampling::OffsetMode;
use crate::siamese::{aggregate, average_weights, AggregationMode, ReasoningMode, SiameseParams};

/// Architecture and loss settings. Everything here is stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Sampled length `M`.
    pub length: usize,
    /// Siamese stream count `K`.
    pub siamese_count: usize,
    pub offset_mode: OffsetMode,
    pub d_raw: usize,
    pub d_emb: usize,
    /// Hidden width `D` (even).
    pub dim: usize,
    pub encoder_layers: usize,
    pub alpha: f64,
    pub lambda: f64,
    /// Off: the anchor stream alone feeds the heads.
    pub use_siamese: bool,
    pub aggregation: AggregationMode,
    pub reasoning: ReasoningMode,
    /// Off: no offset loss; decoding falls back to hard boundaries.
    pub soft_label: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            length: 16,
            siamese_count: 2,
            offset_mode: OffsetMode::Adjacent,
            d_raw: 16,
            d_emb: 16,
            dim: 32,
            encoder_layers: 1,
            alpha: 0.5,
            lambda: 1.0,
            use_siamese: true,
            aggregation: AggregationMode::Affinity,
            reasoning: ReasoningMode::Residual,
            soft_label: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.length < 2 {
            return fail(format!("length must be >= 2, got {}", self.length));
        }
        if self.dim == 0 || self.dim % 2 != 0 {
            return fail(format!("dim must be even and positive, got {}", self.dim));
        }
        if self.d_raw == 0 || self.d_emb == 0 {
            return fail("feature and embedding widths must be positive".into());
        }
        if self.use_siamese && self.siamese_count == 0 {
            return fail("siamese reasoning needs siamese_count >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be a finite non-negative number, got {}", self.lambda));
        }
        Ok(())
    }

    /// Streams actually consumed by the network.
    pub fn active_siamese(&self) -> usize {
        if self.use_siamese {
            self.siamese_count
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub video: EncoderParams,
    pub query: EncoderParams,
    pub interaction: InteractionParams,
    pub siamese: Option<SiameseParams>,
    pub heads: SpanPredictorParams,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// Features entering the heads (`F̃ᵃ`).
    pub features: Var,
    /// `M × K` affinity weights when siamese reasoning is on.
    pub affinity: Option<Var>,
    pub logits: SpanLogits,
    pub offsets: Var,
}

/// Start/end distributions and offsets for one sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inference {
    pub dists: SpanDistributions,
    pub offsets: OffsetPredictions,
}

/// Anything that can produce span distributions for a sample.
pub trait SpanModel: Sync {
    fn infer(&self, sample: &GroundingSample) -> Result<Inference>;
}

#[derive(Debug, Clone)]
pub struct Ssrn {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: ParamStore,
}

impl Ssrn {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let layout = Layout {
            video: EncoderParams::register(&mut store, "video", c.d_raw, c.dim, c.encoder_layers, &mut rng)?,
            query: EncoderParams::register(&mut store, "query", c.d_emb, c.dim, c.encoder_layers, &mut rng)?,
            interaction: InteractionParams::register(&mut store, "interaction", c.dim, &mut rng)?,
            siamese: if c.use_siamese {
                Some(SiameseParams::register(&mut store, "siamese", c.dim, c.alpha, c.reasoning, &mut rng)?)
            } else {
                None
            },
            heads: SpanPredictorParams::register(&mut store, "heads", c.dim, c.dim, &mut rng)?,
        };
        Ok(Ssrn {
            config,
            layout,
            params: store,
        })
    }

    /// Checks sample shapes against the configuration before any compute.
    pub fn check_sample(&self, sample: &GroundingSample) -> Result<()> {
        let c = &self.config;
        let expected = (c.length, c.d_raw);
        let check = |m: &crate::numcore::Matrix| {
            if m.shape() != expected {
                Err(Error::shape("sample features", expected, m.shape()))
            } else {
                Ok(())
            }
        };
        check(&sample.anchor)?;
        if sample.siamese.len() < c.active_siamese() {
            return Err(Error::Validation(format!(
                "sample has {} siamese streams, model needs {}",
                sample.siamese.len(),
                c.active_siamese()
            )));
        }
        for s in &sample.siamese[..c.active_siamese()] {
            check(s)?;
        }
        if sample.query.cols() != c.d_emb || sample.query.rows() == 0 {
            return Err(Error::shape("sample query", (sample.query.rows().max(1), c.d_emb), sample.query.shape()));
        }
        Ok(())
    }

    /// Builds the forward pass against an explicit parameter store.
    pub fn forward_with(&self, g: &mut Graph, store: &ParamStore, sample: &GroundingSample) -> Result<ForwardOutput> {
        self.check_sample(sample)?;
        let l = &self.layout;
        let mut raws = vec![g.constant(sample.anchor.clone())];
        for s in &sample.siamese[..self.config.active_siamese()] {
            raws.push(g.constant(s.clone()));
        }
        let videos = l.video.encode(g, store, &raws)?;
        let q_raw = g.constant(sample.query.clone());
        let q = l.query.encode(g, store, &[q_raw])?[0];
        let fused: Vec<Var> = l
            .interaction
            .fuse_streams(g, store, &videos, q)?
            .into_iter()
            .map(|f| f.features)
            .collect();
        let anchor = fused[0];
        let (features, affinity) = match &l.siamese {
            Some(sp) => {
                let streams = &fused[1..];
                let c = match self.config.aggregation {
                    AggregationMode::Affinity => aggregate(g, anchor, streams)?,
                    AggregationMode::Average => average_weights(g, anchor, streams)?,
                };
                (sp.reason(g, store, anchor, streams, c)?, Some(c))
            }
            None => (anchor, None),
        };
        let logits = l.heads.span_logits(g, store, features)?;
        let offsets = l.heads.offsets(g, store, features)?;
        Ok(ForwardOutput {
            features,
            affinity,
            logits,
            offsets,
        })
    }

    pub fn loss_with(&self, g: &mut Graph, store: &ParamStore, sample: &GroundingSample) -> Result<LossNodes> {
        let out = self.forward_with(g, store, sample)?;
        let offsets = self.config.soft_label.then_some(out.offsets);
        loss_nodes(g, &out.logits, offsets, &sample.labels, self.config.lambda)
    }

    pub fn forward(&self, g: &mut Graph, sample: &GroundingSample) -> Result<ForwardOutput> {
        self.forward_with(g, &self.params, sample)
    }
}

impl SpanModel for Ssrn {
    fn infer(&self, sample: &GroundingSample) -> Result<Inference> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, sample)?;
        let dists = SpanDistributions::from_logits(g.value(out.logits.start).data(), g.value(out.logits.end).data())?;
        let offsets = if self.config.soft_label {
            OffsetPredictions::from_matrix(g.value(out.offsets))?
        } else {
            OffsetPredictions::neutral(dists.len())
        };
        Ok(Inference { dists, offsets })
    }
}

/// Injects ground truth: `P = onehot(τ̂)`, `O = Y′` (or neutral offsets).
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleModel {
    pub neutral_offsets: bool,
}

impl SpanModel for OracleModel {
    fn infer(&self, sample: &GroundingSample) -> Result<Inference> {
        let m = sample.plan.length();
        let l = &sample.labels;
        let dists = SpanDistributions::one_hot(m, l.hard_start, l.hard_end)?;
        let mut offsets = OffsetPredictions::neutral(m);
        if !self.neutral_offsets {
            offsets.start[l.hard_start] = l.offset_start;
            offsets.end[l.hard_end] = l.offset_end;
        }
        Ok(Inference { dists, offsets })
    }
}
