//! Constraint-aware streaming flow policies.
//!
//! Velocity fields learned by flow matching are integrated directly in
//! action space and reshaped at run time by distance-induced metrics, so
//! trajectories bend around obstacles without retraining.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bench;
pub mod error;
pub mod eval;
pub mod exec;
pub mod field;
pub mod geometry;
pub mod kinematics;
pub mod metric;
pub mod nn;
pub mod policy;
pub mod sdf_learn;

pub use error::{Error, Result};
