//! Transfer-matrix cocycles for quasi-periodic Jacobi operators driven by the
//! skew shift `T(x, y) = (x + y, y + ω)` on the two-torus, with estimators
//! for finite-scale Lyapunov exponents, large-deviation measures and the
//! multiscale induction that ties them together.

pub mod archive;
pub mod avalanche;
pub mod cocycle;
pub mod deviation;
pub mod error;
pub mod linalg;
pub mod lyapunov;
pub mod model;
pub mod multiscale;
pub mod pipeline;
pub mod torus;

pub use error::{Error, Result};
