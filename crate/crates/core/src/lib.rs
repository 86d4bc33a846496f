//! One-class face forgery detection from self-supervised soft discrepancies.
//!
//! Real faces are perturbed locally (one patch, one spatial or
//! frequency-domain perturbation); an encoder/projector is trained to map
//! each perturbed face onto a fixed prototype for its (location, type)
//! class. At test time the consistency with which an image's synthetic
//! perturbations land on their prototypes is the detection score.

// `!(x >= 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detector;
pub mod encoder;
pub mod error;
pub mod factory;
pub mod graph;
pub mod losses;
pub mod prototypes;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
