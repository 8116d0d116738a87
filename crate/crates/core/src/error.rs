use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("input too short: {got} samples, need at least {need}")]
    InputTooShort { got: usize, need: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("IPD requires ≥2 channels, got {0}")]
    TooFewChannels(usize),
    #[error("non-finite sample in input")]
    NonFinite,
    #[error("block size {got} does not match hop {hop}")]
    BlockSize { got: usize, hop: usize },

    #[error("absorption {alpha:.4} exceeds 1: RT60 {rt60} s is too short for this room")]
    Absorption { alpha: f64, rt60: f64 },
    #[error("source and microphone coincide")]
    CoincidentPositions,
    #[error("position {0:?} lies outside the room")]
    OutsideRoom([f64; 3]),
    #[error("zone {0} already has a speaker")]
    ZoneOccupied(usize),
    #[error("silent source: {0}")]
    SilentSource(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(PathBuf),
    #[error("missing transcripts for {} entries: {}", .0.len(), format_keys(.0))]
    MissingTranscripts(Vec<(String, usize)>),
    #[error("reference signal has zero energy")]
    ZeroReference,
    #[error("duration must be positive")]
    ZeroDuration,

    #[error("bad magic: expected \"LSZW\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported weights version {0}")]
    UnsupportedVersion(u32),
    #[error("unexpected end of file")]
    UnexpectedEof,
    #[error("malformed weights file: {0}")]
    MalformedWeights(String),

    #[error("expected 16000 Hz, found {0} Hz")]
    SampleRate(u32),
    #[error("WAV parse error at byte {offset}: {msg}")]
    WavFormat { offset: u64, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}

fn format_keys(keys: &[(String, usize)]) -> String {
    let shown: Vec<String> = keys
        .iter()
        .take(8)
        .map(|(c, z)| format!("{c}/zone{z}"))
        .collect();
    if keys.len() > shown.len() {
        format!("{} …", shown.join(", "))
    } else {
        shown.join(", ")
    }
}
