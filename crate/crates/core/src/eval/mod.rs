//! Complexity accounting and quality metrics.

pub mod fir;
pub mod macs;
pub mod metrics;
pub mod rtf;

pub use fir::{compute_fir, compute_fir_with, FirReport, TranscriptRecord, TranscriptSet};
pub use macs::{report_macs, LayerMacs, MacsReport, ModuleMacs};
pub use metrics::{leakage_db, si_sdr, LeakageReport, SI_SDR_CAP_DB};
pub use rtf::{measure_rtf, RtfStats};
