//! Command-line surface.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{sample_all, GroundingSample, RawSample};
use crate::error::{Error, Result};
use crate::io::{load_annotations, load_checkpoint, load_dataset, save_checkpoint, write_dataset, TokenEmbedder, TrainConfig};
use crate::model::{ModelConfig, Ssrn};
use crate::numcore::{grad_check, GradReport, Matrix, DEFAULT_EPS};
use crate::sampling::{bias_report_per_video, BoundaryAnnotation, SamplingPlan};
use crate::training::synth::{synth_dataset, Preset, SyntheticSpec};
use crate::training::{evaluate, mean_losses, predict, train_model, AdamState, MetricsReport, TOP_N};

#[derive(Debug, Parser)]
#[command(name = "ssrn", version, about = "Siamese sampling and reasoning network for temporal grounding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on the evaluation split.
    Evaluate(EvalArgs),
    /// Write top-n segment predictions as JSON lines.
    Predict(PredictArgs),
    /// Compare analytic and finite-difference gradients of the full model.
    GradCheck(GradCheckArgs),
    /// Measure the boundary drift caused by rounding onto the sampled grid.
    BiasReport(BiasArgs),
    /// Generate a synthetic dataset with a ready-to-use config file.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Key = value config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config key (repeatable), e.g. `--set max_steps=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print machine-readable JSON instead of tables.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output path (overrides the config's `checkpoint`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Score hard-decoded boundaries instead of refined ones.
    #[arg(long)]
    pub hard: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = TOP_N)]
    pub top: usize,
    /// Write to a file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Sampled length.
    #[arg(long, default_value_t = 6)]
    pub m: usize,
    /// Query length.
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BiasArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub m: usize,
    /// Include per-annotation IoUs.
    #[arg(long)]
    pub per_sample: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "bias-stress")]
    pub preset: Preset,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub samples: Option<usize>,
}

/// Training and evaluation sets resolved from a config.
pub struct DataSplit {
    pub train: Vec<GroundingSample>,
    pub eval: Vec<GroundingSample>,
}

fn synthetic_spec(cfg: &TrainConfig, preset: Preset) -> SyntheticSpec {
    let d = &cfg.data;
    let mut spec = SyntheticSpec::preset(preset, d.synth_seed.unwrap_or(cfg.train.seed));
    spec.samples = d.synth_samples.unwrap_or(spec.samples);
    spec.snr = d.synth_snr.unwrap_or(spec.snr);
    spec.d_raw = cfg.model.d_raw;
    spec.d_emb = cfg.model.d_emb;
    spec.t_min = spec.t_min.max(cfg.model.length);
    spec.t_max = spec.t_max.max(spec.t_min);
    if spec.off_grid.is_some() {
        spec.off_grid = Some(cfg.model.length);
    }
    spec
}

/// Loads (or synthesizes) the data a config points at and samples it.
pub fn prepare_data(cfg: &TrainConfig) -> Result<DataSplit> {
    cfg.validate()?;
    let m = &cfg.model;
    let d = &cfg.data;
    let embedder = match &d.embeddings {
        Some(p) => {
            let e = TokenEmbedder::load(p)?;
            if e.dim() != m.d_emb {
                return Err(Error::Config(format!("embedding table width {} != d_emb {}", e.dim(), m.d_emb)));
            }
            e
        }
        None => TokenEmbedder::hashed(m.d_emb),
    };
    let mut raw: Vec<RawSample> = match (d.synthetic, &d.annotations, &d.features) {
        (Some(preset), _, _) => synth_dataset(&synthetic_spec(cfg, preset))?,
        (None, Some(ann), Some(feat)) => load_dataset(ann, feat, &embedder)?,
        _ => unreachable!("validated above"),
    };
    let eval_raw = match (&d.eval_annotations, &d.features) {
        (Some(ann), Some(feat)) => load_dataset(ann, feat, &embedder)?,
        (Some(_), None) => return Err(Error::Config("eval_annotations needs a features directory".into())),
        _ if d.holdout > 0 => {
            if d.holdout >= raw.len() {
                return Err(Error::Config(format!("holdout {} leaves no training data", d.holdout)));
            }
            raw.split_off(raw.len() - d.holdout)
        }
        _ => raw.clone(),
    };
    let k = m.siamese_count;
    Ok(DataSplit {
        train: sample_all(&raw, m.length, k, m.offset_mode)?,
        eval: sample_all(&eval_raw, m.length, k, m.offset_mode)?,
    })
}

fn resolve_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::load(&args.config)?;
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("report serializes")
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    steps: usize,
    final_loss: f64,
    train_l1: f64,
    train_l2: f64,
    checkpoint: String,
    eval: &'a MetricsReport,
}

fn cmd_train(args: &TrainArgs) -> Result<String> {
    let mut cfg = resolve_config(&args.common)?;
    if let Some(steps) = args.steps {
        cfg.train.max_steps = steps;
    }
    if let Some(p) = &args.checkpoint {
        cfg.checkpoint = Some(p.clone());
    }
    let out = cfg
        .checkpoint
        .clone()
        .ok_or_else(|| Error::Config("no checkpoint path (set `checkpoint` or pass --checkpoint)".into()))?;
    let data = prepare_data(&cfg)?;
    let mut model = Ssrn::new(cfg.model.clone(), cfg.train.seed)?;
    let mut adam = AdamState::new(&model.params);
    let run = train_model(&mut model, &mut adam, &data.train, Some(&data.eval), &cfg.train)?;
    save_checkpoint(&model, Some(&adam), &out)?;
    let losses = mean_losses(&model, &data.train)?;
    let (_, report) = run.evals.last().expect("final evaluation");
    if args.common.json {
        return Ok(to_json(&TrainSummary {
            steps: run.log.len(),
            final_loss: run.log.last().map_or(f64::NAN, |s| s.total),
            train_l1: losses.l1,
            train_l2: losses.l2,
            checkpoint: out.display().to_string(),
            eval: report,
        }));
    }
    let mut text = String::new();
    let every = (run.log.len() / 10).max(1);
    for s in run.log.iter().filter(|s| s.step % every == 0 || s.step == 1) {
        writeln!(text, "step {:>5}  loss {:.6}  l1 {:.6}  l2 {:.6}", s.step, s.total, s.l1, s.l2).unwrap();
    }
    for (step, r) in &run.evals[..run.evals.len() - 1] {
        writeln!(text, "step {step:>5}  eval R@1,IoU=0.7 {:.2}", r.recall(1, 0.7).unwrap_or(0.0)).unwrap();
    }
    writeln!(text, "train mean l1 {:.6}  l2 {:.6}", losses.l1, losses.l2).unwrap();
    writeln!(text, "checkpoint {}", out.display()).unwrap();
    writeln!(text, "evaluation on {} samples ({} boundaries)", report.samples, if report.refined { "refined" } else { "hard" }).unwrap();
    text.push_str(&report.table());
    Ok(text)
}

fn load_for_eval(common: &ConfigArgs, checkpoint: &Path) -> Result<(Ssrn, DataSplit)> {
    let cfg = resolve_config(common)?;
    let ck = load_checkpoint(checkpoint)?;
    ck.check_compatible(&cfg.model)?;
    let data = prepare_data(&cfg)?;
    Ok((ck.model, data))
}

fn cmd_evaluate(args: &EvalArgs) -> Result<String> {
    let (model, data) = load_for_eval(&args.common, &args.checkpoint)?;
    let report = evaluate(&model, &data.eval, !args.hard)?;
    Ok(if args.common.json { to_json(&report) } else { report.table() })
}

fn cmd_predict(args: &PredictArgs) -> Result<String> {
    if args.top == 0 {
        return Err(Error::Config("--top must be at least 1".into()));
    }
    let (model, data) = load_for_eval(&args.common, &args.checkpoint)?;
    let records = predict(&model, &data.eval, args.top)?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&to_json(r));
        text.push('\n');
    }
    match &args.out {
        Some(p) => {
            fs::write(p, &text).map_err(|e| Error::io(p, e))?;
            Ok(format!("wrote {} predictions to {}", records.len(), p.display()))
        }
        None => Ok(text.trim_end().to_string()),
    }
}

/// Full-model gradient check on one random sample.
pub fn pipeline_grad_check(seed: u64, m: usize, n: usize, d: usize, k: usize, eps: f64) -> Result<GradReport> {
    let cfg = ModelConfig {
        length: m,
        siamese_count: k,
        use_siamese: k > 0,
        d_raw: 3,
        d_emb: 3,
        dim: d,
        ..ModelConfig::default()
    };
    let model = Ssrn::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = 4 * m;
    let start = rng.random_range(0.0..t as f64 / 2.0);
    let end = rng.random_range(start..t as f64);
    let raw = RawSample {
        id: "grad-check".into(),
        features: Matrix::from_fn(t, 3, |_, _| rng.random_range(-1.0..1.0)),
        tokens: vec!["w".into(); n],
        query: Matrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0)),
        annotation: BoundaryAnnotation::new(start, end),
    };
    let sample = raw.sample(m, k, model.config.offset_mode)?;
    grad_check(|g, s| Ok(model.loss_with(g, s, &sample)?.total), &model.params, eps)
}

fn cmd_grad_check(args: &GradCheckArgs) -> Result<String> {
    let report = pipeline_grad_check(args.seed, args.m, args.n, args.d, args.k, args.eps)?;
    let text = if args.json { to_json(&report) } else { report.table() };
    if report.passed {
        Ok(text)
    } else {
        println!("{text}");
        Err(Error::Validation(format!(
            "gradient check failed: max relative error {:.3e} > {:.0e}",
            report.max_rel_error(),
            report.tolerance
        )))
    }
}

fn cmd_bias_report(args: &BiasArgs) -> Result<String> {
    let records = load_annotations(&args.annotations)?;
    let mut items = Vec::with_capacity(records.len());
    for r in &records {
        let plan = SamplingPlan::new(r.num_frames, args.m, 0, Default::default()).map_err(|e| e.in_sample(&r.id))?;
        items.push((BoundaryAnnotation::new(r.start, r.end), plan));
    }
    let mut report = bias_report_per_video(&items)?;
    if !args.per_sample {
        report.ious.clear();
    }
    Ok(serde_json::to_string_pretty(&report).expect("report serializes"))
}

fn cmd_synth(args: &SynthArgs) -> Result<String> {
    let mut cfg = TrainConfig::default();
    cfg.train.seed = args.seed;
    let mut spec = SyntheticSpec::preset(args.preset, args.seed);
    if let Some(n) = args.samples {
        spec.samples = n;
    }
    match args.preset {
        Preset::Overfit => {}
        Preset::BiasStress => {
            cfg.model.siamese_count = 4;
            cfg.train.max_steps = 400;
            cfg.data.holdout = (spec.samples / 5).max(1);
        }
    }
    cfg.model.d_raw = spec.d_raw;
    cfg.model.d_emb = spec.d_emb;
    let raw = synth_dataset(&spec)?;
    write_dataset(&raw, &args.out)?;
    cfg.data.annotations = Some("annotations.jsonl".into());
    cfg.data.features = Some("features".into());
    cfg.checkpoint = Some("model.ckpt".into());
    let cfg_path = args.out.join("ssrn.cfg");
    let text = format!("# generated by `ssrn synth --preset {}`\n{}", args.preset, cfg.to_text());
    fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(format!("wrote {} samples and {}", raw.len(), cfg_path.display()))
}

/// Runs one parsed command and returns its stdout text.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::GradCheck(a) => cmd_grad_check(a),
        Command::BiasReport(a) => cmd_bias_report(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// The single-line JSON error printed on stderr.
pub fn error_line(e: &Error) -> String {
    serde_json::json!({ "error": e.to_string(), "kind": e.kind() }).to_string()
}
