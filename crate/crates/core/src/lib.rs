//! Desk-scale toolkit for 6D pose regression from volumetric OCT-like data.
//!
//! The pipeline: a synthetic simulator renders labeled marker volumes
//! ([`sim`]), 3D CNN architectures are built declaratively ([`arch`]) on a
//! small autodiff tensor core ([`tensor`]), trained and evaluated
//! ([`train`]), and inspected with gradient saliency maps ([`saliency`]).
//! 2D depth representations for the planar baselines live in [`depth`].

pub mod arch;
pub mod blob;
pub mod checkpoint;
pub mod depth;
pub mod error;
pub mod reference;
pub mod rng;
pub mod saliency;
pub mod sim;
pub mod tensor;
pub mod train;

pub use error::{CoreError, Result};
