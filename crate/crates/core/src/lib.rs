//! Sketched finite element solves for elliptic problems with random
//! coefficients.
//!
//! The offline stage reduces a P1 discretization onto the smallest Laplacian
//! eigenvectors and computes leverage scores of the reduced gradient
//! operator. Each online query then samples rows of that operator, solves a
//! small `ρ × ρ` system and lifts the result back to the mesh.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the element-wise formulas in numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod assembly;
pub mod bundle;
pub mod config;
pub mod diagnostics;
pub mod eigen;
pub mod error;
pub mod fields;
pub mod linalg;
pub mod mesh;
pub mod meshgen;
pub mod parallel;
pub mod pipeline;
pub mod reduction;
pub mod sampling;
pub mod sketch;
pub mod verify;

pub use error::{Error, Result};
