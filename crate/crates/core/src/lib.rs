//! Toolkit for Wasserstein GANs on general Banach spaces.
//!
//! * [`autodiff`]: symbolic reverse-mode differentiation that supports
//!   gradients of gradients.
//! * [`spaces`]: `L^p`, Sobolev, weighted and product norms with their duals.
//! * [`lipschitz`]: dual-norm gradients of critics and Lipschitz estimates.
//! * [`transport`]: exact Wasserstein distances between discrete measures.
//! * [`bwgan`]: losses, parameter heuristics and the training loop.
//! * [`cli`]: the `bwgan` command-line front end.

// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod bwgan;
pub mod checkpoint;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod lipschitz;
pub mod nn;
pub mod spaces;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
