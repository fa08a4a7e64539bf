// NaN-rejecting `!(x > 0.0)` checks and index loops over ±1 sign tables are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod acceptance;
pub mod behavior;
pub mod error;
pub mod linalg;
pub mod npa;
pub mod pipeline;
pub mod quantum;
pub mod sdp;
pub mod stats;
pub mod selftest;
pub mod tilted;
pub mod tomography;

pub use error::{Error, Result};
