//! Bias-corrected Adam.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numcore::{Matrix, ParamId, ParamStore};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    /// First moments, indexed like the parameter store.
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Matrix> = store.iter().map(|(_, _, p)| Matrix::zeros(p.rows(), p.cols())).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Moment shapes must mirror the parameters.
    pub fn check(&self, store: &ParamStore) -> Result<()> {
        if self.m.len() != store.len() || self.v.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer state has {} slots for {} parameters",
                self.m.len(),
                store.len()
            )));
        }
        for (i, (_, _, p)) in store.iter().enumerate() {
            for moment in [&self.m[i], &self.v[i]] {
                if moment.shape() != p.shape() {
                    return Err(Error::shape("adam moments", p.shape(), moment.shape()));
                }
            }
        }
        Ok(())
    }
}

/// One update. Parameters without an entry in `grads` see a zero gradient.
pub fn adam_step(store: &mut ParamStore, grads: &BTreeMap<ParamId, Matrix>, state: &mut AdamState, lr: f64) -> Result<()> {
    state.check(store)?;
    for (id, g) in grads {
        let p = store.get(*id);
        if g.shape() != p.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let ids: Vec<ParamId> = store.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        let grad = grads.get(&id);
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = store.get_mut(id).data_mut();
        for j in 0..p.len() {
            let gj = grad.map_or(0.0, |g| g.data()[j]);
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}
