//! Robust adaptive tube model predictive control for linear systems with
//! affine parametric uncertainty and bounded additive disturbances.
//!
//! The crate is organised bottom-up:
//!
//! - [`solvers`]: dense LP (simplex) and convex QP (interior point) solvers.
//! - [`geometry`]: H-polytopes, hypercubes, support functions and the
//!   construction of λ-contractive polytopes.
//! - [`model`]: parametric discrete-time models and the quadrotor
//!   linearisations.
//! - [`estimation`]: set-membership identification and the LMS point estimate.
//! - [`synthesis`]: offline gain, terminal cost, tube constants and validation.
//! - [`controller`]: the per-step tube MPC quadratic program.
//! - [`sim`]: deterministic closed-loop simulation and run logs.
//! - [`config`] / [`cli`]: scenario files, artifact caching and commands.

#![allow(clippy::too_many_arguments)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod controller;
mod error;
pub mod estimation;
pub mod geometry;
pub mod model;
pub mod serde_mat;
pub mod sim;
pub mod solvers;
pub mod synthesis;

pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};
