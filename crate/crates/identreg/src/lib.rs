//! Identifiable parameters, dimensionality-reduction paths and perturbation
//! bounds for ill-posed linear regression.
//!
//! The crate is organized bottom-up:
//!
//! - [`spectral`]: symmetric PSD matrices, pseudoinverses, condition numbers
//!   and effective ranks.
//! - [`subspace`]: orthonormal subspaces, projectors, principal angles and
//!   Krylov bases.
//! - [`population`]: population least squares, the relevant subspace, the
//!   eigenspace truncation ladder and tau-identifiable parameters.
//! - [`reduction`]: the generic reduction-path framework with PCR, PLS and
//!   forward subset selection, plus adaptivity and parsimony verdicts.
//! - [`bounds`]: stability constants and the perturbation bounds that control
//!   population and sample errors.
//! - [`sample`]: sample moments, complexity functionals and the Monte Carlo
//!   check of the sample-perturbation event.
//! - [`harness`]: the closed-form three-feature toy model and the latent-factor
//!   simulation study.
//! - [`io`] and [`cli`]: CSV/JSON formats and the `identreg` command line.
//!
//! Runnable examples for each capability live in `examples/`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod error;
pub mod harness;
pub mod io;
pub mod population;
pub mod reduction;
pub mod rng;
pub mod sample;
pub mod spectral;
pub mod subspace;
pub mod tolerance;

pub use error::{Error, Result};
pub use tolerance::ToleranceConfig;
