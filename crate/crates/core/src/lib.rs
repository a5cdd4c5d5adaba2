//! Piecewise regression and classification built from differentiable set
//! operations.
//!
//! A model is a union of intersections of learnable component functions.
//! Training uses the smooth log-exp form; the exact max-min form gives the
//! same parameters a piecewise reading whose active pieces can be inspected.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod classify;
pub mod data;
pub mod error;
pub mod evolve;
pub mod experiments;
pub mod grad;
pub mod lse;
pub mod model;
pub mod par;
pub mod structure;
pub mod train;

pub use error::{Result, SpineError};
pub use model::{ActiveSet, ComponentFunction, Family, Form, Model, PreLinear, SetStructure};
