//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Every operation evaluates eagerly and appends a node to the tape. Node ids
//! are assigned in creation order, so the tape is already topologically
//! sorted and `backward` is a single reverse sweep.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::numcore::matrix::{dot, Matrix};
use crate::numcore::ops;
use crate::numcore::params::{ParamId, ParamStore};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Backward rule for a user-supplied operation: receives the parent values,
/// the node's output value and the upstream gradient, and returns one
/// gradient per parent (same shapes as the parents).
pub type BackwardFn = Box<dyn Fn(&[&Matrix], &Matrix, &Matrix) -> Vec<Matrix> + Send + Sync>;

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    SoftmaxCols(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    CosineRows(Var, Var),
    ScaleRows(Var, Var),
    Sum(Var),
    Pick(Var, usize, usize),
    CrossEntropy(Var, usize),
    SmoothL1(Var, Vec<f64>),
    Custom(Vec<Var>, BackwardFn),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    params: BTreeMap<ParamId, Matrix>,
}

impl Gradients {
    /// Gradient with respect to any node; `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(&id)
    }

    pub fn params(&self) -> &BTreeMap<ParamId, Matrix> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Matrix> {
        self.params
    }
}

impl fmt::Debug for Gradients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gradients").field("params", &self.params).finish()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: BTreeMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node,
    /// so all uses accumulate into one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.param_leaves.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `a × bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(value, Op::MatMulNT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        if self.shape(row) != (1, ac) {
            return Err(Error::shape("add_row", (ar, ac), self.shape(row)));
        }
        let r = self.value(row).data().to_vec();
        let mut value = self.value(a).clone();
        for i in 0..ar {
            for (v, b) in value.row_mut(i).iter_mut().zip(&r) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    /// `1 − a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| 1.0 - v);
        self.push(value, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(ops::sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = ops::softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let value = ops::softmax_cols(self.value(a));
        self.push(value, Op::SoftmaxCols(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::concat_cols(&values)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::concat_rows(&values)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let value = self.value(a).gather_rows(indices)?;
        Ok(self.push(value, Op::GatherRows(a, indices.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(a).slice_cols(start, len)?;
        Ok(self.push(value, Op::SliceCols(a, start)))
    }

    /// Row-wise cosine similarity as an `rows × 1` column; zero-norm rows give 0.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let cos = ops::cosine_rows(self.value(a), self.value(b))?;
        Ok(self.push(Matrix::column_vector(&cos.values), Op::CosineRows(a, b)))
    }

    /// Scales row `i` of `a` by `weights[i]` (`weights` is `rows × 1`).
    pub fn scale_rows(&mut self, a: Var, weights: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        if self.shape(weights) != (ar, 1) {
            return Err(Error::shape("scale_rows", (ar, ac), self.shape(weights)));
        }
        let w = self.value(weights).data().to_vec();
        let mut value = self.value(a).clone();
        for (i, wi) in w.iter().enumerate() {
            for v in value.row_mut(i) {
                *v *= wi;
            }
        }
        Ok(self.push(value, Op::ScaleRows(a, weights)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Single entry as a `1 × 1` node.
    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        if r >= ar || c >= ac {
            return Err(Error::Index {
                what: "pick",
                index: if r >= ar { r } else { c },
                len: if r >= ar { ar } else { ac },
            });
        }
        let value = Matrix::scalar(self.value(a).get(r, c));
        Ok(self.push(value, Op::Pick(a, r, c)))
    }

    /// Softmax cross-entropy of a logit vector (row or column) against a class index.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let m = self.value(logits);
        if !m.is_vector() {
            return Err(Error::Contract(format!(
                "cross_entropy expects a vector of logits, got {:?}",
                m.shape()
            )));
        }
        let loss = ops::cross_entropy(m.data(), target)?;
        Ok(self.push(Matrix::scalar(loss), Op::CrossEntropy(logits, target)))
    }

    /// Summed smooth-L1 between a node and fixed targets (same element count).
    pub fn smooth_l1(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let loss = ops::smooth_l1(self.value(pred).data(), target)?;
        Ok(self.push(Matrix::scalar(loss), Op::SmoothL1(pred, target.to_vec())))
    }

    /// Operation with a caller-supplied value and backward rule.
    pub fn custom(&mut self, parents: &[Var], value: Matrix, backward: BackwardFn) -> Var {
        self.push(value, Op::Custom(parents.to_vec(), backward))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::Contract(format!("backward needs a scalar (1x1) loss, got {shape:?}")));
        }
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let mut params = BTreeMap::new();
        for (&pid, &v) in &self.param_leaves {
            if let Some(Some(g)) = grads.get(v.0) {
                params.insert(pid, g.clone());
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(&self, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[id];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul_nt(val(*b)).expect("matmul backward");
                let gb = val(*a).matmul_tn(g).expect("matmul backward");
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::MatMulNT(a, b) => {
                // y = a bᵀ: dA = G b, dB = Gᵀ a
                let ga = g.matmul(val(*b)).expect("matmul_nt backward");
                let gb = g.matmul_tn(val(*a)).expect("matmul_nt backward");
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                let mut gr = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (acc, v) in gr.data_mut().iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                accumulate(grads, *row, gr);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.hadamard(val(*b)).expect("mul backward"));
                accumulate(grads, *b, g.hadamard(val(*a)).expect("mul backward"));
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s)),
            Op::OneMinus(a) => accumulate(grads, *a, g.scale(-1.0)),
            Op::Sigmoid(a) => {
                let ga = g.zip_map(&node.value, "sigmoid", |gv, y| gv * y * (1.0 - y)).expect("sigmoid backward");
                accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = g.zip_map(&node.value, "tanh", |gv, y| gv * (1.0 - y * y)).expect("tanh backward");
                accumulate(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => accumulate(grads, *a, softmax_rows_backward(&node.value, g)),
            Op::SoftmaxCols(a) => {
                let ga = softmax_rows_backward(&node.value.transpose(), &g.transpose()).transpose();
                accumulate(grads, *a, ga);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).cols();
                    accumulate(grads, p, g.slice_cols(start, w).expect("concat_cols backward"));
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = val(p).rows();
                    let idx: Vec<usize> = (start..start + h).collect();
                    accumulate(grads, p, g.gather_rows(&idx).expect("concat_rows backward"));
                    start += h;
                }
            }
            Op::GatherRows(a, indices) => {
                let src = val(*a);
                let mut ga = Matrix::zeros(src.rows(), src.cols());
                for (i, &r) in indices.iter().enumerate() {
                    for (acc, v) in ga.row_mut(r).iter_mut().zip(g.row(i)) {
                        *acc += v;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::SliceCols(a, start) => {
                let src = val(*a);
                let mut ga = Matrix::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, ga);
            }
            Op::CosineRows(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let mut gx = Matrix::zeros(x.rows(), x.cols());
                let mut gy = Matrix::zeros(y.rows(), y.cols());
                for r in 0..x.rows() {
                    let (xr, yr) = (x.row(r), y.row(r));
                    let nx = dot(xr, xr).sqrt();
                    let ny = dot(yr, yr).sqrt();
                    if nx == 0.0 || ny == 0.0 {
                        continue;
                    }
                    let c = node.value.get(r, 0);
                    let up = g.get(r, 0);
                    let inv = 1.0 / (nx * ny);
                    for ((gxv, gyv), (&xv, &yv)) in
                        gx.row_mut(r).iter_mut().zip(gy.row_mut(r).iter_mut()).zip(xr.iter().zip(yr))
                    {
                        *gxv = up * (yv * inv - c * xv / (nx * nx));
                        *gyv = up * (xv * inv - c * yv / (ny * ny));
                    }
                }
                accumulate(grads, *a, gx);
                accumulate(grads, *b, gy);
            }
            Op::ScaleRows(a, w) => {
                let (x, wv) = (val(*a), val(*w));
                let mut ga = g.clone();
                let mut gw = Matrix::zeros(wv.rows(), 1);
                for r in 0..x.rows() {
                    let wr = wv.get(r, 0);
                    for v in ga.row_mut(r) {
                        *v *= wr;
                    }
                    gw.set(r, 0, dot(g.row(r), x.row(r)));
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *w, gw);
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                accumulate(grads, *a, Matrix::filled(r, c, g.get(0, 0)));
            }
            Op::Pick(a, r, c) => {
                let (rows, cols) = val(*a).shape();
                let mut ga = Matrix::zeros(rows, cols);
                ga.set(*r, *c, g.get(0, 0));
                accumulate(grads, *a, ga);
            }
            Op::CrossEntropy(logits, target) => {
                let l = val(*logits);
                let mut p = ops::softmax(l.data());
                p[*target] -= 1.0;
                let up = g.get(0, 0);
                let ga = Matrix::from_vec(l.rows(), l.cols(), p.into_iter().map(|v| v * up).collect())
                    .expect("cross_entropy backward");
                accumulate(grads, *logits, ga);
            }
            Op::SmoothL1(pred, target) => {
                let p = val(*pred);
                let up = g.get(0, 0);
                let data = p
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(pv, t)| up * ops::smooth_l1_grad(pv - t))
                    .collect();
                accumulate(grads, *pred, Matrix::from_vec(p.rows(), p.cols(), data).expect("smooth_l1 backward"));
            }
            Op::Custom(parents, backward) => {
                let values: Vec<&Matrix> = parents.iter().map(|&p| val(p)).collect();
                let pg = backward(&values, &node.value, g);
                assert_eq!(pg.len(), parents.len(), "custom backward must return one gradient per parent");
                for (&p, gp) in parents.iter().zip(pg) {
                    assert_eq!(gp.shape(), val(p).shape(), "custom backward gradient shape");
                    accumulate(grads, p, gp);
                }
            }
        }
    }
}

fn softmax_rows_backward(y: &Matrix, g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let (yr, gr) = (y.row(r), g.row(r));
        let inner = dot(yr, gr);
        for ((o, &yv), &gv) in out.row_mut(r).iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - inner);
        }
    }
    out
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_gradient() {
        let mut store = ParamStore::new();
        let a_id = store.add("a", Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]])).unwrap();
        let b_val = Matrix::from_rows(&[[0.5, -1.0], [2.0, 0.25]]);
        let mut g = Graph::new();
        let a = g.param(&store, a_id);
        let b = g.constant(b_val.clone());
        let prod = g.mul(a, b).unwrap();
        let loss = g.sum(prod);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param(a_id).unwrap(), &b_val);
    }

    #[test]
    fn cross_entropy_gradient_is_p_minus_onehot() {
        let logits = [0.2, -1.0, 3.0, 0.0];
        let mut g = Graph::new();
        let l = g.constant(Matrix::column_vector(&logits));
        let loss = g.cross_entropy(l, 1).unwrap();
        let grads = g.backward(loss).unwrap();
        let mut expected = ops::softmax(&logits);
        expected[1] -= 1.0;
        for (x, y) in grads.wrt(l).unwrap().data().iter().zip(&expected) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut g = Graph::new();
        let a = g.constant(Matrix::zeros(2, 1));
        assert!(matches!(g.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn repeated_param_use_accumulates() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::scalar(3.0)).unwrap();
        let mut g = Graph::new();
        let a = g.param(&store, w);
        let b = g.param(&store, w);
        assert_eq!(a, b);
        let sq = g.mul(a, b).unwrap();
        let grads = g.backward(sq).unwrap();
        assert_eq!(grads.param(w).unwrap().get(0, 0), 6.0);
    }

    #[test]
    fn unreachable_param_has_no_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::scalar(3.0)).unwrap();
        let u = store.add("u", Matrix::scalar(1.0)).unwrap();
        let mut g = Graph::new();
        let a = g.param(&store, w);
        let _ = g.param(&store, u);
        let loss = g.scale(a, 2.0);
        let grads = g.backward(loss).unwrap();
        assert!(grads.param(u).is_none());
        assert_eq!(grads.param(w).unwrap().get(0, 0), 2.0);
    }
}
