//! Wavelet-expert fine-tuning for binary segmentation.
//!
//! Everything numeric is generic over [`Scalar`]; the aliases below fix the
//! two precisions in use (`f32` for training, `f64` for gradient checks).

pub mod adapter;
pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod twe;
pub mod wavelet;
pub mod wten;

pub use autodiff::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use kernels::conv::PadMode;
pub use kernels::sample::ResizeMode;
pub use params::{count_params, Init, ParamCounts, ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
