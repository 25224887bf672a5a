//! Diagonal-plus-low-rank (DLoR) network laboratory.
//!
//! * [`linalg`] dense matrices, SVD, LU, seeded random matrices
//! * [`activation`] activation catalog with expansion points
//! * [`rank1`] rank-1 interpolation constructions and their failure modes
//! * [`decompose`] additive and multiplicative DLoR decompositions
//! * [`construct`] h-parameterized network surgery and dense-to-DLoR transfer
//! * [`train`] trainable dense / deep / wide networks with Adam
//! * [`experiments`] scripted sawtooth experiments writing CSV/JSON artifacts
//!
//! With the default `parallel` feature, sweeps and multi-seed runs fan out
//! over rayon; without it they run sequentially with identical results.

pub mod activation;
pub mod construct;
pub mod decompose;
pub mod experiments;
pub mod linalg;
pub mod par;
pub mod rank1;
pub mod train;

pub use activation::{ActivationKind, ActivationSpec};
pub use linalg::{Matrix, Vector};
