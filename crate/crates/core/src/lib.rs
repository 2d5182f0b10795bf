//! Certifiable solver for scaled bundle adjustment (SBA).
//!
//! Estimates camera rotations, translations, and per-frame scales from
//! depth-lifted keypoint observations by marginalizing translations and
//! landmarks out of the quadratic objective, solving the resulting
//! semidefinite relaxation with a low-rank Riemannian staircase, and
//! certifying global optimality through the dual certificate's minimum
//! eigenvalue.

pub mod certificate;
pub mod cli;
pub mod error;
pub mod manifold;
pub mod pipeline;
pub mod recovery;
pub mod reduction;
pub mod report;
pub mod staircase;
pub mod viewgraph;

pub use error::{Result, SbaError};
