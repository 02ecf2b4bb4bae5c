//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every field of the
//! model, optimizer and data settings has its own key; see [`TrainConfig::to_text`]
//! for the full list with defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::synth::Preset;
use crate::training::TrainOptions;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataConfig {
    pub synthetic: Option<Preset>,
    pub synth_samples: Option<usize>,
    /// Defaults to the training seed.
    pub synth_seed: Option<u64>,
    pub synth_snr: Option<f64>,
    pub annotations: Option<PathBuf>,
    /// Directory holding `<video>.feat` files.
    pub features: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub eval_annotations: Option<PathBuf>,
    /// Trailing samples held out for evaluation (0: evaluate on the training set).
    pub holdout: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub train: TrainOptions,
    pub data: DataConfig,
    pub checkpoint: Option<PathBuf>,
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key} = {value:?}: {why}"))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| bad(key, value, e))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

/// Enum values use their serde names.
fn named<T: DeserializeOwned>(key: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string())).map_err(|e| bad(key, value, e))
}

fn name_of<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("enum did not serialize to a string: {other:?}"),
    }
}

impl ModelConfig {
    /// Applies one key; returns `false` for keys that are not model settings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "length" => self.length = num(key, value)?,
            "siamese_count" => self.siamese_count = num(key, value)?,
            "offset_mode" => self.offset_mode = named(key, value)?,
            "d_raw" => self.d_raw = num(key, value)?,
            "d_emb" => self.d_emb = num(key, value)?,
            "dim" => self.dim = num(key, value)?,
            "encoder_layers" => self.encoder_layers = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "use_siamese" => self.use_siamese = flag(key, value)?,
            "aggregation" => self.aggregation = named(key, value)?,
            "reasoning" => self.reasoning = named(key, value)?,
            "soft_label" => self.soft_label = flag(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("length", self.length.to_string()),
            ("siamese_count", self.siamese_count.to_string()),
            ("offset_mode", name_of(&self.offset_mode)),
            ("d_raw", self.d_raw.to_string()),
            ("d_emb", self.d_emb.to_string()),
            ("dim", self.dim.to_string()),
            ("encoder_layers", self.encoder_layers.to_string()),
            ("alpha", self.alpha.to_string()),
            ("lambda", self.lambda.to_string()),
            ("use_siamese", self.use_siamese.to_string()),
            ("aggregation", name_of(&self.aggregation)),
            ("reasoning", name_of(&self.reasoning)),
            ("soft_label", self.soft_label.to_string()),
        ]
    }

    /// Parses the `key = value` form produced by [`ModelConfig::entries`].
    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (key, (line, value)) in parse_pairs(text, origin)? {
            if !cfg.set(&key, &value)? {
                return Err(Error::Parse {
                    path: origin.into(),
                    line,
                    message: format!("unknown model key {key:?}"),
                });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Splits `key = value` lines, rejecting malformed and duplicate keys.
pub fn parse_pairs(text: &str, origin: &Path) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.into(),
            line: i + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("expected key = value, found {line:?}")))?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(parse_err("empty key".into()));
        }
        if out.insert(key.clone(), (i + 1, value.trim().to_string())).is_some() {
            return Err(parse_err(format!("duplicate key {key:?}")));
        }
    }
    Ok(out)
}

impl TrainConfig {
    /// Applies one override. Unknown keys are configuration errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set(key, value)? {
            return Ok(());
        }
        let path = || Some(PathBuf::from(value));
        let t = &mut self.train;
        let d = &mut self.data;
        match key {
            "learning_rate" => t.learning_rate = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "max_steps" => t.max_steps = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "eval_every" => t.eval_every = num(key, value)?,
            "refined_eval" => t.refined_eval = flag(key, value)?,
            "synthetic" => d.synthetic = Some(value.parse()?),
            "synth_samples" => d.synth_samples = Some(num(key, value)?),
            "synth_seed" => d.synth_seed = Some(num(key, value)?),
            "synth_snr" => d.synth_snr = Some(num(key, value)?),
            "annotations" => d.annotations = path(),
            "features" => d.features = path(),
            "embeddings" => d.embeddings = path(),
            "eval_annotations" => d.eval_annotations = path(),
            "holdout" => d.holdout = num(key, value)?,
            "checkpoint" => self.checkpoint = path(),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses config text; relative paths are resolved against `base`.
    pub fn from_text(text: &str, origin: &Path, base: &Path) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (key, (line, value)) in parse_pairs(text, origin)? {
            cfg.set(&key, &value).map_err(|e| match e {
                Error::Config(message) => Error::Parse {
                    path: origin.into(),
                    line,
                    message,
                },
                other => other,
            })?;
        }
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, path, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let d = &mut self.data;
        for p in [&mut d.annotations, &mut d.features, &mut d.embeddings, &mut d.eval_annotations, &mut self.checkpoint]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let d = &self.data;
        match (d.synthetic, &d.annotations, &d.features) {
            (Some(_), None, None) => {}
            (None, Some(_), Some(_)) => {}
            (Some(_), _, _) => return Err(Error::Config("synthetic data excludes annotations/features".into())),
            _ => return Err(Error::Config("set either synthetic or both annotations and features".into())),
        }
        Ok(())
    }

    /// Every key with its current value.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# model\n");
        out.push_str(&self.model.to_text());
        let t = &self.train;
        out.push_str("# optimization\n");
        for (k, v) in [
            ("learning_rate", t.learning_rate.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("max_steps", t.max_steps.to_string()),
            ("seed", t.seed.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("refined_eval", t.refined_eval.to_string()),
        ] {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push_str("# data\n");
        let d = &self.data;
        let opt = |k: &str, v: Option<String>| v.map(|v| format!("{k} = {v}\n")).unwrap_or_default();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        out.push_str(&opt("synthetic", d.synthetic.map(|p| p.to_string())));
        out.push_str(&opt("synth_samples", d.synth_samples.map(|v| v.to_string())));
        out.push_str(&opt("synth_seed", d.synth_seed.map(|v| v.to_string())));
        out.push_str(&opt("synth_snr", d.synth_snr.map(|v| v.to_string())));
        out.push_str(&opt("annotations", path(&d.annotations)));
        out.push_str(&opt("features", path(&d.features)));
        out.push_str(&opt("embeddings", path(&d.embeddings)));
        out.push_str(&opt("eval_annotations", path(&d.eval_annotations)));
        out.push_str(&format!("holdout = {}\n", d.holdout));
        out.push_str(&opt("checkpoint", path(&self.checkpoint)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siamese::{AggregationMode, ReasoningMode};

    fn parse(text: &str) -> Result<TrainConfig> {
        TrainConfig::from_text(text, Path::new("c.cfg"), Path::new("/base"))
    }

    #[test]
    fn round_trip_through_text() {
        let mut cfg = TrainConfig::default();
        cfg.set("aggregation", "average").unwrap();
        cfg.set("reasoning", "concat").unwrap();
        cfg.set("offset_mode", "spread").unwrap();
        cfg.set("synthetic", "bias-stress").unwrap();
        cfg.set("alpha", "0.25").unwrap();
        cfg.set("checkpoint", "/tmp/m.ckpt").unwrap();
        assert_eq!(cfg.model.aggregation, AggregationMode::Average);
        assert_eq!(cfg.model.reasoning, ReasoningMode::Concat);
        let back = parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        back.validate().unwrap();
    }

    #[test]
    fn relative_paths_and_comments() {
        let cfg = parse("# c\n\nannotations = a.jsonl\nfeatures=feat\n learning_rate = 0.01 \n").unwrap();
        assert_eq!(cfg.data.annotations, Some(PathBuf::from("/base/a.jsonl")));
        assert_eq!(cfg.data.features, Some(PathBuf::from("/base/feat")));
        assert_eq!(cfg.train.learning_rate, 0.01);
        cfg.validate().unwrap();
    }

    #[test]
    fn malformed_input_is_located() {
        assert!(matches!(parse("seed = 1\nnonsense\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("seed = 1\nseed = 2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("\nbogus = 1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("dim = x\n"), Err(Error::Parse { line: 1, .. })));
        assert!(parse("use_siamese = maybe\n").is_err());
        assert!(TrainConfig::default().validate().is_err());
    }

    #[test]
    fn model_section_round_trip() {
        let m = ModelConfig {
            length: 64,
            use_siamese: false,
            ..ModelConfig::default()
        };
        assert_eq!(ModelConfig::from_text(&m.to_text(), Path::new("x")).unwrap(), m);
        assert!(ModelConfig::from_text("learning_rate = 1\n", Path::new("x")).is_err());
    }
}
