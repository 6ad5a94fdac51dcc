//! Injective (backward-Monge) martingale couplings of one-dimensional
//! measures in convex order.
//!
//! The pipeline: [`potential`] splits a pair into irreducible components,
//! [`curtain`] cuts each component into blocks using the left-curtain
//! coupling, and [`injective`] runs the alternating construction on each
//! block, driven by the convex hulls of [`hull`] and the stopping masses of
//! [`shadow`]. [`verify`] checks the result independently.

pub mod cli;
pub mod curtain;
pub mod error;
pub mod hull;
pub mod injective;
pub mod kernel;
pub mod measures;
pub mod potential;
pub mod shadow;
pub mod verify;

pub use error::{Error, Result};
pub use measures::{Measure, MeasureSpec};
