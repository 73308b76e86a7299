//! Identification of damage processes in quasi-static damaged elasticity.
//!
//! The forward model couples the equilibrium `−div((1 − d)𝔼ε(u)) = f` (with
//! traction `τ` on part of the boundary) to the damage evolution
//! `d' = (1 − d)^{-α} g(t, x, ∇^μu)`. The crate provides
//!
//! * the forward solver (global Picard iteration over the damage trajectory),
//! * the exact derivative of the discrete forward map and its transpose,
//! * projected Landweber iteration with discrepancy stopping, and
//! * diagnostics for contraction, tangential cone and ill-posedness.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod damage;
pub mod error;
pub mod exec;
pub mod fem;
pub mod forward;
pub mod gram;
pub mod inversion;
pub mod linalg;
pub mod mollifier;
pub mod presets;
pub mod process;
pub mod sensitivity;

pub use error::{Error, Result};
pub use exec::Exec;
