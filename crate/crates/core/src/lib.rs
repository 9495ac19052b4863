//! Ratio estimators `Z'/Z` for Bayesian inversion and entropic-risk optimal
//! control governed by affine-parametric elliptic PDEs, with computable
//! a-posteriori bounds for the quasi-Monte Carlo and finite element errors.

// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bip;
pub mod coefficient;
pub mod driver;
pub mod error;
pub mod fem;
pub mod mesh;
pub mod par;
pub mod ocp;
pub mod qmc;
pub mod ratio;

pub use coefficient::AffineCoefficient;
pub use error::{Error, Result};
pub use mesh::TriangleMesh;
pub use par::Execution;
