//! Persistence: feature files, checkpoints and config text survive a round trip.

use std::fs;
use std::path::Path;

use proptest::prelude::*;
use ssrn::data::sample_all;
use ssrn::io::checkpoint::{decode_checkpoint, encode_checkpoint};
use ssrn::io::features::{decode_features, encode_features};
use ssrn::io::{load_checkpoint, save_checkpoint, TrainConfig};
use ssrn::model::{ModelConfig, SpanModel, Ssrn};
use ssrn::numcore::Matrix;
use ssrn::training::{synth_dataset, train_model, AdamState, Preset, SyntheticSpec, TrainOptions};
use ssrn::Error;

proptest! {
    #[test]
    fn features_round_trip_through_f32(rows in 0usize..20, cols in 1usize..12, seed in any::<u32>()) {
        let m = Matrix::from_fn(rows, cols, |r, c| {
            let x = (seed as f64 + 1.0) * (r * cols + c + 1) as f64;
            (x.sin() * 1e3).trunc() / 7.0
        });
        let back = decode_features(&encode_features(&m), Path::new("x.feat")).unwrap();
        prop_assert_eq!(back, m.map(|v| f64::from(v as f32)));
    }

    #[test]
    fn truncated_feature_files_are_rejected(cut in 1usize..16) {
        let bytes = encode_features(&Matrix::filled(3, 2, 0.5));
        let err = decode_features(&bytes[..bytes.len() - cut], Path::new("x.feat")).unwrap_err();
        prop_assert!(matches!(err, Error::Length { .. } | Error::Format { .. }), "{err}");
    }
}

fn small_config() -> ModelConfig {
    ModelConfig {
        length: 8,
        dim: 8,
        ..ModelConfig::default()
    }
}

#[test]
fn trained_checkpoint_reloads_bit_identically() {
    let cfg = small_config();
    let spec = SyntheticSpec {
        samples: 6,
        ..SyntheticSpec::preset(Preset::Overfit, 4)
    };
    let data = sample_all(&synth_dataset(&spec).unwrap(), cfg.length, cfg.siamese_count, cfg.offset_mode).unwrap();
    let mut model = Ssrn::new(cfg, 9).unwrap();
    let mut adam = AdamState::new(&model.params);
    let opts = TrainOptions {
        max_steps: 3,
        batch_size: 2,
        ..TrainOptions::default()
    };
    train_model(&mut model, &mut adam, &data, None, &opts).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&model, Some(&adam), &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert!(back.model.params.bit_identical(&model.params));
    assert_eq!(back.adam.as_ref(), Some(&adam));
    for s in &data {
        let (a, b) = (model.infer(s).unwrap(), back.model.infer(s).unwrap());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.dists.start), bits(&b.dists.start));
        assert_eq!(bits(&a.dists.end), bits(&b.dists.end));
        assert_eq!(bits(&a.offsets.start), bits(&b.offsets.start));
        assert_eq!(bits(&a.offsets.end), bits(&b.offsets.end));
    }
}

#[test]
fn every_single_byte_corruption_is_caught() {
    let model = Ssrn::new(
        ModelConfig {
            length: 4,
            dim: 4,
            d_raw: 2,
            d_emb: 2,
            ..ModelConfig::default()
        },
        1,
    )
    .unwrap();
    let bytes = encode_checkpoint(&model, None);
    let p = Path::new("m.ckpt");
    for i in (0..bytes.len()).step_by(97) {
        let mut damaged = bytes.clone();
        damaged[i] ^= 0x40;
        assert!(decode_checkpoint(&damaged, p).is_err(), "flip at byte {i} went unnoticed");
    }
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_checkpoint(&dir.path().join("absent.ckpt")).unwrap_err();
    assert_eq!(err.kind(), "io");
}

#[test]
fn config_text_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    let mut cfg = TrainConfig::default();
    cfg.model.alpha = 0.25;
    cfg.model.siamese_count = 3;
    cfg.train.learning_rate = 5e-4;
    cfg.data.synth_samples = Some(12);
    fs::write(&path, cfg.to_text()).unwrap();
    let back = TrainConfig::load(&path).unwrap();
    assert_eq!(back.model, cfg.model);
    assert_eq!(back.train, cfg.train);
    assert_eq!(back.data.synth_samples, Some(12));
}
