//! Deterministic signal-processing kernels feeding the network.

pub mod ipd;
pub mod mel;
pub mod stft;

pub use ipd::{compute_ipd, wrap_phase, IpdTensor};
pub use mel::{apply_mel, mel_filterbank, mel_inverse, MelFeature, MelFilterbank, MelInverse};
pub use stft::{istft, stft, ComplexSpectrogram, Stft, StftConfig};
