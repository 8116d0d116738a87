//! Multi-zone speech separation for in-car microphone arrays.

pub mod cnp;
pub mod dsp;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod eval;
pub mod scalar;
pub mod sim;
pub mod spaiec;
pub mod tensor;
pub mod train;
pub mod wav;

pub use error::{Error, Result};
pub use scalar::Real;
pub use tensor::Tensor3;

pub type Tensor3F32 = Tensor3<f32>;
pub type Tensor3F64 = Tensor3<f64>;

pub type ModelF32 = model::LsZoneModel<f32>;
pub type ModelF64 = model::LsZoneModel<f64>;
