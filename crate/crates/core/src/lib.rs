// `!(x > 0.0)` is the NaN-rejecting form of validation used throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod echo;
pub mod eigen;
pub mod error;
pub mod fit;
pub mod model;
pub mod spectra;
pub mod spin;
pub mod tensor;
pub mod zefoz;
