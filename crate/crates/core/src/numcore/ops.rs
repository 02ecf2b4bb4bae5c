//! Value-level kernels shared by the differentiable graph and by callers that
//! only need forward values.

use crate::error::{Error, Result};
use crate::numcore::matrix::{dot, Matrix};

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

/// Softmax of a plain slice, stabilized by max subtraction.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    if !out.is_empty() {
        softmax_in_place(&mut out);
    }
    out
}

pub fn log_softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = values.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    values.iter().map(|v| v - lse).collect()
}

pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_cols(m: &Matrix) -> Matrix {
    softmax_rows(&m.transpose()).transpose()
}

/// Row-wise cosine similarities plus the number of rows that had a zero norm
/// on either side (those rows report similarity 0).
#[derive(Debug, Clone, PartialEq)]
pub struct CosineRows {
    pub values: Vec<f64>,
    pub zero_norm_rows: usize,
}

pub fn cosine_rows(a: &Matrix, b: &Matrix) -> Result<CosineRows> {
    a.same_shape(b, "cosine_rows")?;
    let mut values = Vec::with_capacity(a.rows());
    let mut zero_norm_rows = 0;
    for r in 0..a.rows() {
        let (x, y) = (a.row(r), b.row(r));
        let nx = dot(x, x).sqrt();
        let ny = dot(y, y).sqrt();
        if nx == 0.0 || ny == 0.0 {
            zero_norm_rows += 1;
            values.push(0.0);
        } else {
            values.push((dot(x, y) / (nx * ny)).clamp(-1.0, 1.0));
        }
    }
    Ok(CosineRows {
        values,
        zero_norm_rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise<'a> {
    Add(&'a Matrix),
    Mul(&'a Matrix),
    ConcatCols(&'a Matrix),
    Scale(f64),
}

pub fn elementwise(a: &Matrix, op: Elementwise<'_>) -> Result<Matrix> {
    match op {
        Elementwise::Add(b) => a.add(b),
        Elementwise::Mul(b) => a.hadamard(b),
        Elementwise::ConcatCols(b) => Matrix::concat_cols(&[a, b]),
        Elementwise::Scale(s) => Ok(a.scale(s)),
    }
}

/// `-log softmax(logits)[target]`.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::Index {
            what: "cross-entropy logits",
            index: target,
            len: logits.len(),
        });
    }
    Ok(-log_softmax(logits)[target])
}

/// Summed smooth-L1 (Huber with unit threshold).
pub fn smooth_l1(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape("smooth_l1", (1, pred.len()), (1, target.len())));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| smooth_l1_term(p - t))
        .sum())
}

#[inline]
pub(crate) fn smooth_l1_term(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

#[inline]
pub(crate) fn smooth_l1_grad(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_uniform_and_closed_form() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0, 0.0]]);
        for v in softmax_rows(&m).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax_rows(&Matrix::row_vector(&[0.0, 3f64.ln()]));
        assert!((p.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((p.get(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_cols_normalizes_columns() {
        let m = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0], [2.0, 0.0]]);
        let s = softmax_cols(&m);
        for c in 0..2 {
            assert!((s.column(c).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_examples() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [3.0, -4.0]]);
        let b = Matrix::from_rows(&[[0.0, 1.0], [1.0, 1.0], [3.0, -4.0]]);
        let c = cosine_rows(&a, &b).unwrap();
        assert_eq!(c.values[0], 0.0);
        assert!((c.values[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((c.values[2] - 1.0).abs() < 1e-15);
        assert_eq!(c.zero_norm_rows, 0);
    }

    #[test]
    fn cosine_zero_norm_row_is_zero_and_counted() {
        let a = Matrix::from_rows(&[[0.0, 0.0], [1.0, 2.0]]);
        let b = Matrix::from_rows(&[[1.0, 1.0], [0.0, 0.0]]);
        let c = cosine_rows(&a, &b).unwrap();
        assert_eq!(c.values, vec![0.0, 0.0]);
        assert_eq!(c.zero_norm_rows, 2);
    }

    #[test]
    fn elementwise_examples() {
        let a = Matrix::from_rows(&[[1.5, -2.0], [0.25, 4.0]]);
        assert_eq!(elementwise(&a, Elementwise::Mul(&Matrix::ones(2, 2))).unwrap(), a);
        let wide = elementwise(&a, Elementwise::ConcatCols(&Matrix::zeros(2, 3))).unwrap();
        assert_eq!(wide.shape(), (2, 5));
        let sum = elementwise(&Matrix::scalar(1.0), Elementwise::Add(&Matrix::scalar(2.0))).unwrap();
        assert_eq!(sum, Matrix::scalar(3.0));
        assert!(elementwise(&a, Elementwise::Add(&Matrix::zeros(1, 2))).is_err());
        assert_eq!(elementwise(&a, Elementwise::Scale(2.0)).unwrap().get(1, 1), 8.0);
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy(&[0.3; 7], 2).unwrap() - 7f64.ln()).abs() < 1e-12);
        let logits = [0.0, 3f64.ln()];
        assert!((cross_entropy(&logits, 1).unwrap() - (-(0.75f64).ln())).abs() < 1e-12);
        assert!((cross_entropy(&logits, 0).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((cross_entropy(&logits, 1).unwrap() - 0.28768).abs() < 1e-5);
        assert!((cross_entropy(&logits, 0).unwrap() - 1.38629).abs() < 1e-5);
        assert!(matches!(cross_entropy(&logits, 2), Err(Error::Index { index: 2, .. })));
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(&[0.3, 1.2], &[0.3, 1.2]).unwrap(), 0.0);
        assert_eq!(smooth_l1(&[1.5], &[1.0]).unwrap(), 0.125);
        assert_eq!(smooth_l1(&[0.0], &[2.0]).unwrap(), 1.5);
        assert!(smooth_l1(&[0.0], &[]).is_err());
    }

    fn small_matrix() -> impl Strategy<Value = Matrix> {
        (1usize..8, 1usize..8).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-20.0f64..20.0, r * c)
                .prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one_and_shift_invariant(m in small_matrix(), shift in -50.0f64..50.0) {
            let p = softmax_rows(&m);
            let q = softmax_rows(&m.map(|v| v + shift));
            for r in 0..p.rows() {
                prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(p.row(r).iter().all(|&v| v >= 0.0));
            }
            for (x, y) in p.data().iter().zip(q.data()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn cosine_is_bounded_symmetric_scale_invariant(
            (a, b) in (1usize..8, 1usize..8).prop_flat_map(|(r, c)| (
                proptest::collection::vec(-5.0f64..5.0, r * c).prop_map(move |d| Matrix::from_vec(r, c, d).unwrap()),
                proptest::collection::vec(-5.0f64..5.0, r * c).prop_map(move |d| Matrix::from_vec(r, c, d).unwrap()),
            )),
            lambda in 0.01f64..100.0,
        ) {
            let ab = cosine_rows(&a, &b).unwrap().values;
            let ba = cosine_rows(&b, &a).unwrap().values;
            let scaled = cosine_rows(&a.scale(lambda), &b).unwrap().values;
            for i in 0..ab.len() {
                prop_assert!((-1.0..=1.0).contains(&ab[i]));
                prop_assert!((ab[i] - ba[i]).abs() <= 1e-12);
                prop_assert!((ab[i] - scaled[i]).abs() <= 1e-12);
            }
        }
    }
}
