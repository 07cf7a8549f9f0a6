//! Small f64 numeric core: row-major matrices, stable scalar ops, AdamW,
//! and finite-difference gradient checking. Everything is single threaded
//! and allocation patterns are fixed, so repeated runs are bitwise equal.

pub mod adamw;
pub mod gradcheck;
pub mod linalg;
pub mod ops;

pub use adamw::{AdamW, AdamWConfig};
pub use gradcheck::{check_gradient, GradCheckConfig, GradCheckReport};
