//! Dense samples as loaded or synthesized, and their sampled training form.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::Matrix;
use crate::sampling::{BoundaryAnnotation, BoundaryLabels, OffsetMode, SamplingPlan};

/// Deterministic pseudo-random vector for `key`, entries `N(0, 1/dim)`.
pub fn hash_vector(key: &str, dim: usize) -> Vec<f64> {
    let digest: [u8; 32] = Sha256::digest(key.as_bytes()).into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let scale = 1.0 / (dim as f64).sqrt();
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect()
}

/// Stacks one hashed embedding per token.
pub fn hash_embeddings(tokens: &[String], dim: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = tokens.iter().map(|t| hash_vector(&format!("token:{t}"), dim)).collect();
    if rows.is_empty() {
        return Matrix::zeros(0, dim);
    }
    Matrix::from_rows(&rows)
}

/// One video/query pair at dense-frame resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub id: String,
    /// `T × d_raw` dense frame features.
    pub features: Matrix,
    pub tokens: Vec<String>,
    /// `N × d_emb` token embeddings.
    pub query: Matrix,
    pub annotation: BoundaryAnnotation,
}

impl RawSample {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    /// Samples anchor and siamese sequences and builds boundary labels.
    pub fn sample(&self, length: usize, siamese: usize, mode: OffsetMode) -> Result<GroundingSample> {
        self.build(length, siamese, mode).map_err(|e| e.in_sample(&self.id))
    }

    fn build(&self, length: usize, siamese: usize, mode: OffsetMode) -> Result<GroundingSample> {
        if self.query.rows() == 0 {
            return Err(Error::Validation("empty query".into()));
        }
        let plan = SamplingPlan::new(self.frames(), length, siamese, mode)?;
        let labels = plan.map_boundary(&self.annotation)?;
        let anchor = self.features.gather_rows(&plan.anchor_indices())?;
        let siamese = (1..=siamese)
            .map(|k| self.features.gather_rows(&plan.siamese_indices(k)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(GroundingSample {
            id: self.id.clone(),
            anchor,
            siamese,
            query: self.query.clone(),
            annotation: self.annotation,
            labels,
            plan,
        })
    }
}

/// One training/evaluation unit after sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingSample {
    pub id: String,
    /// `M × d_raw`.
    pub anchor: Matrix,
    /// `K` sequences, each `M × d_raw`.
    pub siamese: Vec<Matrix>,
    pub query: Matrix,
    pub annotation: BoundaryAnnotation,
    pub labels: BoundaryLabels,
    pub plan: SamplingPlan,
}

pub fn sample_all(raw: &[RawSample], length: usize, siamese: usize, mode: OffsetMode) -> Result<Vec<GroundingSample>> {
    raw.iter().map(|r| r.sample(length, siamese, mode)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashed_embeddings_are_stable() {
        let a = hash_vector("x", 8);
        assert_eq!(a, hash_vector("x", 8));
        assert_ne!(a, hash_vector("y", 8));
        let m = hash_embeddings(&["a".into(), "b".into(), "a".into()], 4);
        assert_eq!(m.shape(), (3, 4));
        assert_eq!(m.row(0), m.row(2));
    }

    #[test]
    fn sampling_gathers_rows_and_labels() {
        let raw = RawSample {
            id: "v".into(),
            features: Matrix::from_fn(20, 2, |r, c| (r * 10 + c) as f64),
            tokens: vec!["a".into()],
            query: Matrix::ones(1, 3),
            annotation: BoundaryAnnotation::new(3.0, 12.5),
        };
        let s = raw.sample(4, 2, OffsetMode::Adjacent).unwrap();
        assert_eq!(s.anchor.column(0), vec![0.0, 50.0, 100.0, 150.0]);
        assert_eq!(s.siamese[1].column(0), vec![20.0, 70.0, 120.0, 170.0]);
        assert_eq!((s.labels.hard_start, s.labels.hard_end), (0, 2));

        let mut bad = raw.clone();
        bad.annotation = BoundaryAnnotation::new(5.0, 30.0);
        let err = bad.sample(4, 0, OffsetMode::Adjacent).unwrap_err();
        assert!(matches!(err, Error::Sample { ref id, .. } if id == "v"));
    }
}
