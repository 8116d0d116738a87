//! Analytic multiply-accumulate counts.
//!
//! Only multiply-accumulates are counted. Normalizations, activations and the
//! elementwise gate arithmetic of the GRU are excluded.

use crate::nn::conv::ConvSpec;
use crate::nn::gru::gru_step_macs;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv(ConvSpec),
    Linear { in_dim: usize, out_dim: usize },
    /// Recurrence run independently over every band.
    Gru { input: usize, hidden: usize },
    LayerNorm { dim: usize },
    Activation,
}

/// MACs for a layer applied to an input with `bands × frames` positions.
pub fn macs_count(layer: &LayerSpec, bands: usize, frames: usize) -> u64 {
    let positions = (bands * frames) as u64;
    match *layer {
        LayerSpec::Conv(spec) => spec.macs(bands, frames),
        LayerSpec::Linear { in_dim, out_dim } => positions * (in_dim * out_dim) as u64,
        LayerSpec::Gru { input, hidden } => positions * gru_step_macs(input, hidden),
        LayerSpec::LayerNorm { .. } | LayerSpec::Activation => 0,
    }
}
