//! Differentiable building blocks with hand-derived gradients.

pub mod act;
pub mod conv;
pub mod gru;
pub mod linear;
pub mod macs;
pub mod norm;
pub mod params;

pub use act::{sigmoid, silu};
pub use conv::{Conv1d, ConvAxis, ConvSpec, Padding};
pub use gru::{Gru, GruTrace};
pub use linear::Linear;
pub use macs::{macs_count, LayerSpec};
pub use norm::LayerNorm;
pub use params::{Grads, Init, ParamId, ParamInfo, ParamStore, Params};
