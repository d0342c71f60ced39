//! A small reverse-mode training engine for residual networks with batch
//! normalization, and a normalization-free alternative built from
//! weight-normalized convolutions, adaptive gradient clipping and dropout.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub use params::{ParamStore, Parameter};
pub use tensor::{Element, Tape, Tensor, Var};
