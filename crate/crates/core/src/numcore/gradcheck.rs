//! Central finite-difference verification of [`Graph::backward`].

use serde::Serialize;

use crate::error::Result;
use crate::numcore::graph::{Graph, Var};
use crate::numcore::params::ParamStore;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_error: f64,
    /// `(row, col)` of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub eps: f64,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
    pub passed: bool,
    /// Set when a perturbed evaluation produced a non-finite loss.
    pub failure: Option<String>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    /// Parameters whose error exceeded the tolerance.
    pub fn failing(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(move |p| !(p.max_rel_error <= self.tolerance))
    }

    /// Fixed-width text table, one line per parameter.
    pub fn table(&self) -> String {
        let mut out = format!("{:<40} {:>8} {:>12}  status\n", "parameter", "elements", "max_rel_err");
        for p in &self.params {
            let status = if p.max_rel_error <= self.tolerance { "pass" } else { "FAIL" };
            out.push_str(&format!("{:<40} {:>8} {:>12.3e}  {status}\n", p.name, p.elements, p.max_rel_error));
        }
        if let Some(f) = &self.failure {
            out.push_str(&format!("failure: {f}\n"));
        }
        out.push_str(&format!(
            "overall: {} (max {:.3e}, tolerance {:.0e}, eps {:.0e})\n",
            if self.passed { "pass" } else { "FAIL" },
            self.max_rel_error(),
            self.tolerance,
            self.eps
        ));
        out
    }
}

/// `|a − b| / max(1, |a|, |b|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares the analytic gradient of the scalar built by `build` against
/// central differences for every element of every parameter in `store`.
pub fn grad_check<F>(build: F, store: &ParamStore, eps: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    assert!(eps > 0.0, "grad_check eps must be positive");
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let grads = g.backward(loss)?;

    let mut work = store.clone();
    let mut params = Vec::with_capacity(store.len());
    let mut failure = None;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, s)?;
        Ok(g.value(loss).get(0, 0))
    };

    'outer: for (id, name, value) in store.iter() {
        let cols = value.cols();
        let mut check = ParamCheck {
            name: name.to_string(),
            elements: value.len(),
            max_rel_error: 0.0,
            worst: (0, 0),
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..value.len() {
            let original = value.data()[i];
            work.get_mut(id).data_mut()[i] = original + eps;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = original - eps;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = original;

            if !plus.is_finite() || !minus.is_finite() {
                failure = Some(format!("non-finite loss when perturbing {name}[{}, {}]", i / cols, i % cols));
                check.max_rel_error = f64::INFINITY;
                check.worst = (i / cols, i % cols);
                params.push(check);
                break 'outer;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.param(id).map_or(0.0, |m| m.data()[i]);
            let err = relative_error(analytic, numeric);
            if err > check.max_rel_error || !err.is_finite() {
                check.max_rel_error = err;
                check.worst = (i / cols, i % cols);
                check.analytic = analytic;
                check.numeric = numeric;
            }
        }
        params.push(check);
    }

    let passed = failure.is_none() && params.iter().all(|p| p.max_rel_error <= GRAD_TOLERANCE);
    Ok(GradReport {
        eps,
        tolerance: GRAD_TOLERANCE,
        params,
        passed,
        failure,
    })
}
