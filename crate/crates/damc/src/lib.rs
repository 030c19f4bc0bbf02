//! Semi-supervised matrix completion with distributional side information.
//!
//! The library estimates a shared low-rank subspace from *unlabeled* entry
//! samples (implicit feedback) via truncated SVD, then fits a small core
//! matrix on *labeled* samples (explicit feedback) under a nuclear-norm
//! budget. Alongside the estimator it ships the classic SoftImpute and
//! user-KNN baselines, calculators for the assumption constants and
//! generalization-bound terms that govern the method, and a reproducible
//! experiment harness (synthetic error-decomposition grids and a masked
//! MovieLens protocol) driven by the `damc` CLI.
//!
//! Module map:
//!
//! - [`synthgen`] — synthetic worlds with a shared row/column subspace and
//!   i.i.d. labeled/unlabeled sampling from them;
//! - [`subspace`] — empirical PMF accumulation, truncated SVD, side-info
//!   construction, Procrustes subspace distance, spectral diagnostics;
//! - [`imc`] — nuclear-ball projections and the projected/factored
//!   core-matrix solvers, plus prediction and risk evaluation;
//! - [`baselines`] — SoftImpute and user-based KNN;
//! - [`bounds`] — assumption constants and bound-term evaluation;
//! - [`experiments`] — grid runner, disentangled-gap estimate, MovieLens
//!   loader and masking protocol, CSV schemas;
//! - [`cli`] — the `damc` command-line surface.

pub mod baselines;
pub mod bounds;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod imc;
pub mod rng;
pub mod subspace;
pub mod synthgen;

mod linalg;
pub(crate) mod mat_serde;

pub use error::{Error, Result};

// Book chapters double as doc-tests so the guide can never drift from the
// code it demonstrates.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/worlds.md")]
    mod worlds {}
    #[doc = include_str!("../../../book/src/subspace.md")]
    mod subspace {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    mod bounds {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
