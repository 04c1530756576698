//! Mesh-free electromigration stress analysis for multi-segment interconnect trees.
//!
//! Each segment's hydrostatic stress is written in closed form as an
//! image series of erfc basis functions driven by the boundary stress
//! gradients. Gradients at terminals and their initial values at junctions
//! are known exactly; the time derivatives of junction gradients come from
//! a small tanh MLP trained, without labels, to make stress continuous
//! across junctions. A finite-volume implicit solver serves as reference.

// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dynamic;
pub mod config;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod io;
pub mod neural;
pub mod oracle;
pub mod physics;
pub mod pipeline;
pub mod training;
pub mod trial;

pub use error::{Error, Result};
