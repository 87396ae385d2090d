//! Dense linear algebra, optimization and quadrature primitives.

pub mod chol;
pub mod eigen;
pub mod optim;
pub mod quad;
pub mod stats;
