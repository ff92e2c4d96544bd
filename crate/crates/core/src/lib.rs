//! Gradient descent with a fixed step-size viewed as a discrete dynamical
//! system `theta -> theta - eta grad L(theta)`.
//!
//! * [`model`]: networks, losses and exact derivatives.
//! * [`landscape`]: minima manifolds of linear networks, Hessian spectra,
//!   the critical step-size `eta_E` and the properness / non-singularity probes.
//! * [`dynamics`]: iterating the map and classifying what happens.
//! * [`experiments`]: trapping-region sweeps, weakly-stable arc lengths, grids
//!   and figure datasets.
//! * [`data`]: synthetic tasks, IDX ingestion, CSV and manifest output.

// `!(x > 0.0)` is deliberate: NaN must fail every validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod landscape;
pub mod model;
mod nelder_mead;
pub mod par;
pub mod quadrature;

pub use error::{Error, Result};
pub use model::{Activation, Architecture, DataBatch, LossKind, ParamVector};
pub use par::Execution;
