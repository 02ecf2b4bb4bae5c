//! Dense matrices, reverse-mode differentiation and gradient checking.

pub mod gradcheck;
pub mod graph;
pub mod matrix;
pub mod ops;
pub mod params;

pub use gradcheck::{grad_check, GradReport, ParamCheck, DEFAULT_EPS, GRAD_TOLERANCE};
pub use graph::{BackwardFn, Gradients, Graph, Var};
pub use matrix::Matrix;
pub use params::{ParamId, ParamStore};
