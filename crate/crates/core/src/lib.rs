//! Light-field salient object detection with a dual local graph and
//! reciprocative guidance, built on a small self-contained autodiff engine.

#![cfg_attr(feature = "double", allow(clippy::unnecessary_cast))]

pub mod ablation;
pub mod checks;
pub mod config;
pub mod data;
pub mod dlg;
pub mod encoder;
pub mod error;
pub mod head;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod reference;
pub mod tensor;
pub mod trainer;

pub use error::{DlgError, Result};
pub use tensor::{Graph, ParamStore, Scalar, SeededRng, Tensor, Var};
