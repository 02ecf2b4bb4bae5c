//! Synthetic grounding data: Gaussian frame noise with a query-correlated
//! signal added to the frames inside the target segment.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{hash_embeddings, hash_vector, RawSample};
use crate::error::{Error, Result};
use crate::numcore::Matrix;
use crate::sampling::BoundaryAnnotation;

pub const CONCEPTS: [&str; 12] = [
    "door", "dog", "car", "ball", "guitar", "knife", "phone", "window", "bike", "cup", "book", "horse",
];
const FILLERS: [&str; 10] = ["person", "the", "a", "then", "opens", "holds", "near", "slowly", "picks", "up"];

/// Boundaries in a bias-stress set keep at least this fractional distance
/// from every sampled-grid position.
pub const OFF_GRID_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub d_raw: usize,
    pub d_emb: usize,
    pub query_min: usize,
    pub query_max: usize,
    /// Signal energy over expected noise energy per frame.
    pub snr: f64,
    /// Segment length as a fraction of `T`.
    pub span_min: f64,
    pub span_max: f64,
    pub seed: u64,
    /// Sampled length whose grid the boundaries must avoid.
    pub off_grid: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 32 short videos for memorization runs.
    Overfit,
    /// Noisier frames, all boundaries off the `M = 16` grid.
    BiasStress,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overfit" => Ok(Preset::Overfit),
            "bias-stress" => Ok(Preset::BiasStress),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected overfit or bias-stress)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Overfit => "overfit",
            Preset::BiasStress => "bias-stress",
        })
    }
}

impl SyntheticSpec {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        match preset {
            Preset::Overfit => SyntheticSpec {
                samples: 32,
                t_min: 100,
                t_max: 300,
                d_raw: 16,
                d_emb: 16,
                query_min: 3,
                query_max: 6,
                snr: 1.0,
                span_min: 0.25,
                span_max: 0.6,
                seed,
                off_grid: None,
            },
            Preset::BiasStress => SyntheticSpec {
                samples: 320,
                t_min: 100,
                t_max: 300,
                d_raw: 16,
                d_emb: 16,
                query_min: 3,
                query_max: 6,
                snr: 0.3,
                span_min: 0.25,
                span_max: 0.6,
                seed,
                off_grid: Some(16),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.samples == 0 {
            return fail("samples must be positive");
        }
        if self.t_min < 2 || self.t_min > self.t_max {
            return fail("need 2 <= t_min <= t_max");
        }
        if let Some(m) = self.off_grid {
            if self.t_min < m {
                return fail("t_min must be at least the sampled length");
            }
        }
        if self.query_min == 0 || self.query_min > self.query_max {
            return fail("need 1 <= query_min <= query_max");
        }
        if self.d_raw == 0 || self.d_emb == 0 {
            return fail("feature widths must be positive");
        }
        if !(self.snr >= 0.0 && self.snr.is_finite()) {
            return fail("snr must be finite and non-negative");
        }
        if !(0.0 < self.span_min && self.span_min <= self.span_max && self.span_max <= 1.0) {
            return fail("need 0 < span_min <= span_max <= 1");
        }
        Ok(())
    }
}

/// Unit direction in raw-feature space carried by frames matching `concept`.
pub fn concept_direction(concept: &str, dim: usize) -> Vec<f64> {
    let v = hash_vector(&format!("concept:{concept}"), dim);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

fn off_grid(tau: f64, t: usize, m: usize) -> bool {
    let pos = tau / t as f64 * m as f64;
    let frac = pos - pos.floor();
    (OFF_GRID_MARGIN..=1.0 - OFF_GRID_MARGIN).contains(&frac)
}

pub fn synth_dataset(spec: &SyntheticSpec) -> Result<Vec<RawSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let amplitude = (spec.snr * spec.d_raw as f64).sqrt();
    let mut out = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let t = rng.random_range(spec.t_min..=spec.t_max);
        let concept = CONCEPTS[rng.random_range(0..CONCEPTS.len())];
        let n = rng.random_range(spec.query_min..=spec.query_max);
        let slot = rng.random_range(0..n);
        let tokens: Vec<String> = (0..n)
            .map(|j| {
                if j == slot {
                    concept.to_string()
                } else {
                    FILLERS[rng.random_range(0..FILLERS.len())].to_string()
                }
            })
            .collect();
        let annotation = loop {
            let len = rng.random_range(spec.span_min..=spec.span_max) * t as f64;
            let start = rng.random_range(0.0..=(t as f64 - len));
            let ann = BoundaryAnnotation::new(start, start + len);
            match spec.off_grid {
                Some(m) if !(off_grid(ann.start, t, m) && off_grid(ann.end, t, m)) => continue,
                _ => break ann,
            }
        };
        let dir = concept_direction(concept, spec.d_raw);
        let mut features = Matrix::zeros(t, spec.d_raw);
        for f in 0..t {
            let center = f as f64 + 0.5;
            let inside = center >= annotation.start && center <= annotation.end;
            let row = features.row_mut(f);
            for (d, x) in row.iter_mut().enumerate() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                *x = noise + if inside { amplitude * dir[d] } else { 0.0 };
            }
        }
        out.push(RawSample {
            id: format!("syn{i:05}"),
            query: hash_embeddings(&tokens, spec.d_emb),
            tokens,
            features,
            annotation,
        });
    }
    Ok(out)
}
