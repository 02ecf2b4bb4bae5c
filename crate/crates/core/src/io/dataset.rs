//! Whole datasets on disk: an annotation file plus a directory of
//! `<video>.feat` dense feature files.

use std::fs;
use std::path::Path;

use crate::data::RawSample;
use crate::error::{Error, Result};
use crate::io::annotations::{load_annotations, write_annotations, AnnotationRecord};
use crate::io::embeddings::TokenEmbedder;
use crate::io::features::{load_features, save_features};
use crate::sampling::BoundaryAnnotation;

/// Loads every annotated sample. When a feature file has a different row
/// count than the annotation's `num_frames`, times are rescaled onto the
/// feature rows.
pub fn load_dataset(annotations: &Path, features: &Path, embedder: &TokenEmbedder) -> Result<Vec<RawSample>> {
    load_annotations(annotations)?
        .into_iter()
        .map(|rec| {
            let id = rec.id.clone();
            build_sample(rec, features, embedder).map_err(|e| e.in_sample(&id))
        })
        .collect()
}

fn build_sample(rec: AnnotationRecord, dir: &Path, embedder: &TokenEmbedder) -> Result<RawSample> {
    let feats = load_features(&dir.join(format!("{}.feat", rec.video)))?;
    let rows = feats.rows();
    if rows == 0 {
        return Err(Error::Validation(format!("feature file for {} has no rows", rec.video)));
    }
    let scale = rows as f64 / rec.num_frames as f64;
    let annotation = BoundaryAnnotation::new(rec.start * scale, (rec.end * scale).min(rows as f64));
    annotation.validate(rows)?;
    Ok(RawSample {
        id: rec.id,
        features: feats,
        query: embedder.embed(&rec.query),
        tokens: rec.query,
        annotation,
    })
}

/// Writes `annotations.jsonl` and `features/<id>.feat` under `dir`.
pub fn write_dataset(samples: &[RawSample], dir: &Path) -> Result<()> {
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        save_features(&s.features, &feat_dir.join(format!("{}.feat", s.id)))?;
        records.push(AnnotationRecord {
            id: s.id.clone(),
            video: s.id.clone(),
            num_frames: s.frames(),
            start: s.annotation.start,
            end: s.annotation.end,
            query: s.tokens.clone(),
        });
    }
    write_annotations(&records, &dir.join("annotations.jsonl"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::synth::{synth_dataset, Preset, SyntheticSpec};

    #[test]
    fn written_dataset_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            samples: 3,
            ..SyntheticSpec::preset(Preset::Overfit, 2)
        };
        let raw = synth_dataset(&spec).unwrap();
        write_dataset(&raw, dir.path()).unwrap();
        let back = load_dataset(
            &dir.path().join("annotations.jsonl"),
            &dir.path().join("features"),
            &TokenEmbedder::hashed(spec.d_emb),
        )
        .unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in raw.iter().zip(&back) {
            assert_eq!(a.annotation, b.annotation);
            assert_eq!(a.query, b.query);
            let f32_copy = a.features.map(|x| f64::from(x as f32));
            assert_eq!(f32_copy, b.features);
        }
    }

    #[test]
    fn missing_feature_file_names_the_sample() {
        let dir = tempfile::tempdir().unwrap();
        let ann = dir.path().join("a.jsonl");
        fs::write(&ann, "{\"id\":\"v9\",\"num_frames\":10,\"start\":1,\"end\":2,\"query\":[\"a\"]}\n").unwrap();
        let err = load_dataset(&ann, dir.path(), &TokenEmbedder::hashed(4)).unwrap_err();
        assert!(matches!(err, Error::Sample { ref id, .. } if id == "v9"));
        assert_eq!(err.kind(), "io");
    }

    #[test]
    fn annotation_times_follow_feature_rows() {
        let dir = tempfile::tempdir().unwrap();
        let ann = dir.path().join("a.jsonl");
        fs::write(&ann, "{\"id\":\"v\",\"num_frames\":100,\"start\":10,\"end\":50,\"query\":[\"a\"]}\n").unwrap();
        save_features(&crate::numcore::Matrix::zeros(50, 2), &dir.path().join("v.feat")).unwrap();
        let s = &load_dataset(&ann, dir.path(), &TokenEmbedder::hashed(4)).unwrap()[0];
        assert_eq!((s.annotation.start, s.annotation.end), (5.0, 25.0));
    }
}
