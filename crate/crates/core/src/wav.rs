//! Minimal RIFF/WAVE reader and writer: PCM16 or IEEE float32 at 16 kHz.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleFormat {
    #[default]
    Pcm16,
    Float32,
}

impl std::str::FromStr for SampleFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcm16" => Ok(Self::Pcm16),
            "float32" => Ok(Self::Float32),
            other => Err(Error::Config(format!("unknown sample format {other:?}"))),
        }
    }
}

/// Samples as `[channel][frame]`.
pub type Channels = Vec<Vec<f32>>;

fn bad(offset: usize, msg: impl Into<String>) -> Error {
    Error::WavFormat {
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn u16_at(b: &[u8], at: usize) -> Result<u16> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| bad(at, "truncated header"))
}

fn u32_at(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| bad(at, "truncated header"))
}

/// Parses a complete file image. Rejects anything but 16 kHz.
pub fn decode_wav(bytes: &[u8]) -> Result<Channels> {
    if bytes.get(0..4) != Some(b"RIFF") {
        return Err(bad(0, "missing RIFF tag"));
    }
    if bytes.get(8..12) != Some(b"WAVE") {
        return Err(bad(8, "missing WAVE tag"));
    }
    let mut at = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = u32_at(bytes, at + 4)? as usize;
        let body = at + 8;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(bad(at + 4, format!("fmt chunk of {size} bytes is too small")));
                }
                let mut tag = u16_at(bytes, body)?;
                let channels = u16_at(bytes, body + 2)?;
                let rate = u32_at(bytes, body + 4)?;
                let bits = u16_at(bytes, body + 14)?;
                if tag == FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err(bad(at + 4, "extensible fmt chunk is too small"));
                    }
                    tag = u16_at(bytes, body + 24)?;
                }
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let (tag, channels, rate, bits) = fmt.ok_or_else(|| bad(at, "data chunk before fmt chunk"))?;
                if rate != SAMPLE_RATE {
                    return Err(Error::SampleRate(rate));
                }
                if channels == 0 {
                    return Err(bad(at, "zero channels"));
                }
                let width = match (tag, bits) {
                    (FORMAT_PCM, 16) => 2,
                    (FORMAT_FLOAT, 32) => 4,
                    _ => return Err(bad(at, format!("unsupported encoding: format {tag}, {bits} bits"))),
                };
                let end = body + size;
                let data = bytes
                    .get(body..end)
                    .ok_or_else(|| bad(bytes.len(), format!("data chunk declares {size} bytes past end of file")))?;
                let ch = channels as usize;
                let frame = width * ch;
                if data.len() % frame != 0 {
                    return Err(bad(body, format!("data size {size} is not a multiple of the {frame}-byte frame")));
                }
                let n = data.len() / frame;
                let mut out = vec![Vec::with_capacity(n); ch];
                for f in data.chunks_exact(frame) {
                    for (c, s) in f.chunks_exact(width).enumerate() {
                        let v = if width == 2 {
                            i16::from_le_bytes([s[0], s[1]]) as f32 / 32768.0
                        } else {
                            f32::from_le_bytes([s[0], s[1], s[2], s[3]])
                        };
                        out[c].push(v);
                    }
                }
                return Ok(out);
            }
            _ => {}
        }
        at = body + size + (size & 1);
    }
    Err(bad(bytes.len(), if fmt.is_some() { "no data chunk" } else { "no fmt chunk" }))
}

pub fn read_wav(path: &Path) -> Result<Channels> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes).map_err(|e| match e {
        Error::WavFormat { offset, msg } => Error::Parse {
            path: path.to_path_buf(),
            msg: format!("WAV parse error at byte {offset}: {msg}"),
        },
        other => other,
    })
}

/// PCM16 uses symmetric scaling by 32768 with clamping.
pub fn encode_wav(channels: &[Vec<f32>], format: SampleFormat) -> Result<Vec<u8>> {
    let ch = channels.len();
    if ch == 0 || ch > u16::MAX as usize {
        return Err(Error::shape(format!("cannot write {ch} channels")));
    }
    let n = channels[0].len();
    if channels.iter().any(|c| c.len() != n) {
        return Err(Error::shape("channels differ in length"));
    }
    let (tag, width) = match format {
        SampleFormat::Pcm16 => (FORMAT_PCM, 2usize),
        SampleFormat::Float32 => (FORMAT_FLOAT, 4usize),
    };
    let data_len = n * ch * width;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&(ch as u16).to_le_bytes());
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * (ch * width) as u32).to_le_bytes());
    out.extend_from_slice(&((ch * width) as u16).to_le_bytes());
    out.extend_from_slice(&((width * 8) as u16).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for i in 0..n {
        for c in channels {
            match format {
                SampleFormat::Pcm16 => {
                    let v = (c[i] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    out.extend_from_slice(&v.to_le_bytes());
                }
                SampleFormat::Float32 => out.extend_from_slice(&c[i].to_le_bytes()),
            }
        }
    }
    Ok(out)
}

pub fn write_wav(path: &Path, channels: &[Vec<f32>], format: SampleFormat) -> Result<()> {
    let bytes = encode_wav(channels, format)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signal(ch: usize, n: usize) -> Channels {
        (0..ch).map(|c| (0..n).map(|i| ((i * (c + 3)) as f32 * 0.013).sin() * 0.9).collect()).collect()
    }

    #[test]
    fn float_round_trip_is_bit_exact() {
        let x = signal(6, 1000);
        let y = decode_wav(&encode_wav(&x, SampleFormat::Float32).unwrap()).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn pcm16_scaling_and_range() {
        let x = vec![vec![-1.0, -0.5, 0.0, 0.5, 0.999_99, 1.5, -2.0]; 6];
        let y = decode_wav(&encode_wav(&x, SampleFormat::Pcm16).unwrap()).unwrap();
        assert_eq!(y.len(), 6);
        assert_eq!(y[0], vec![-1.0, -0.5, 0.0, 0.5, 32767.0 / 32768.0, 32767.0 / 32768.0, -1.0]);
        assert!(y.iter().flatten().all(|&v| (-1.0..1.0).contains(&v)));
    }

    #[test]
    fn rejects_other_rates() {
        let mut b = encode_wav(&signal(1, 10), SampleFormat::Pcm16).unwrap();
        b[24..28].copy_from_slice(&44_100u32.to_le_bytes());
        let e = decode_wav(&b).unwrap_err();
        assert!(e.to_string().contains("expected 16000 Hz"), "{e}");
    }

    #[test]
    fn malformed_headers_report_offsets() {
        let good = encode_wav(&signal(2, 10), SampleFormat::Pcm16).unwrap();
        let mut b = good.clone();
        b[8..12].copy_from_slice(b"WAVX");
        assert!(matches!(decode_wav(&b), Err(Error::WavFormat { offset: 8, .. })));
        let e = decode_wav(&good[..good.len() - 3]).unwrap_err();
        assert!(matches!(e, Error::WavFormat { .. }), "{e}");
        assert!(matches!(decode_wav(&good[..20]), Err(Error::WavFormat { .. })));
    }

    #[test]
    fn skips_unknown_chunks() {
        let good = encode_wav(&signal(1, 4), SampleFormat::Float32).unwrap();
        let mut b = good[..36].to_vec();
        b.extend_from_slice(b"LIST");
        b.extend_from_slice(&3u32.to_le_bytes());
        b.extend_from_slice(&[1, 2, 3, 0]);
        b.extend_from_slice(&good[36..]);
        assert_eq!(decode_wav(&b).unwrap(), signal(1, 4));
    }
}
