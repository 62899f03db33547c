//! Structured-light dark-field microscopy: forward simulation of
//! fringe-modulated dark-field acquisitions, structured-illumination
//! reconstruction, optical sectioning, and evaluation targets/metrics.

// `!(x > 0.0)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod imagecore;
pub mod optics;
pub mod patterns;
pub mod recon;
pub mod sectioning;

pub use error::{Error, Result};
