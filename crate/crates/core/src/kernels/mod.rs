//! Raw forward/backward kernels on plain tensors.

pub(crate) mod broadcast;
pub mod conv;
pub mod haar;
pub mod sample;
