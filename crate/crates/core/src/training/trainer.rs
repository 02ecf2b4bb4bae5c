//! Mini-batch training with deterministic gradient reduction.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::GroundingSample;
use crate::error::{Error, Result};
use crate::heads::LossBundle;
use crate::model::Ssrn;
use crate::numcore::{Graph, Matrix, ParamId};
use crate::training::adam::{adam_step, AdamState};
use crate::training::eval::evaluate;
use crate::training::metrics::MetricsReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Seeds the batch order.
    pub seed: u64,
    /// Evaluate on the held-out set every this many steps (0 = only at the end).
    pub eval_every: usize,
    pub refined_eval: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            learning_rate: 1e-3,
            batch_size: 8,
            max_steps: 500,
            seed: 0,
            eval_every: 0,
            refined_eval: true,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub total: f64,
    pub l1: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRun {
    pub log: Vec<StepLog>,
    pub evals: Vec<(usize, MetricsReport)>,
}

/// Mean loss and gradients over a batch. Per-sample work runs in parallel;
/// the reduction walks the batch in order, so the result does not depend on
/// the thread count.
pub fn batch_gradients(model: &Ssrn, batch: &[&GroundingSample]) -> Result<(LossBundle, BTreeMap<ParamId, Matrix>)> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let per_sample = batch
        .par_iter()
        .map(|s| {
            let mut g = Graph::new();
            let nodes = model.loss_with(&mut g, &model.params, s).map_err(|e| e.in_sample(&s.id))?;
            let bundle = LossBundle {
                l1: g.value(nodes.l1).get(0, 0),
                l2: nodes.l2.map_or(0.0, |v| g.value(v).get(0, 0)),
                total: g.value(nodes.total).get(0, 0),
            };
            let grads = g.backward(nodes.total)?.into_params();
            Ok((bundle, grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut sum = LossBundle {
        l1: 0.0,
        l2: 0.0,
        total: 0.0,
    };
    let mut grads: BTreeMap<ParamId, Matrix> = BTreeMap::new();
    for (bundle, g) in per_sample {
        sum.l1 += bundle.l1 * scale;
        sum.l2 += bundle.l2 * scale;
        sum.total += bundle.total * scale;
        for (id, m) in g {
            let m = m.scale(scale);
            match grads.get_mut(&id) {
                Some(acc) => *acc = acc.add(&m)?,
                None => {
                    grads.insert(id, m);
                }
            }
        }
    }
    Ok((sum, grads))
}

/// Runs `max_steps` Adam updates over shuffled mini-batches.
pub fn train_model(
    model: &mut Ssrn,
    adam: &mut AdamState,
    train: &[GroundingSample],
    held_out: Option<&[GroundingSample]>,
    opts: &TrainOptions,
) -> Result<TrainRun> {
    opts.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    for s in train {
        model.check_sample(s).map_err(|e| e.in_sample(&s.id))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut log = Vec::with_capacity(opts.max_steps);
    let mut evals = Vec::new();
    for step in 1..=opts.max_steps {
        let mut batch = Vec::with_capacity(opts.batch_size);
        while batch.len() < opts.batch_size.min(train.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&train[order[cursor]]);
            cursor += 1;
        }
        let (loss, grads) = batch_gradients(model, &batch)?;
        if !loss.total.is_finite() {
            return Err(Error::Validation(format!("non-finite loss at step {step}")));
        }
        adam_step(&mut model.params, &grads, adam, opts.learning_rate)?;
        log.push(StepLog {
            step,
            total: loss.total,
            l1: loss.l1,
            l2: loss.l2,
        });
        if let Some(set) = held_out {
            if opts.eval_every > 0 && step % opts.eval_every == 0 && step != opts.max_steps {
                evals.push((step, evaluate(model, set, opts.refined_eval)?));
            }
        }
    }
    if let Some(set) = held_out {
        evals.push((opts.max_steps, evaluate(model, set, opts.refined_eval)?));
    }
    Ok(TrainRun { log, evals })
}
