//! `LSZW` weight files: magic, version, tensor count, then per tensor the
//! UTF-8 name, rank, dims, and an f32 payload. All integers little-endian.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use super::{LsZoneModel, ModelConfig};
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spaiec::GateMode;

pub const MAGIC: &[u8; 4] = b"LSZW";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn write_weights(out: &mut impl Write, tensors: &[WeightTensor]) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        out.write_all(&(t.name.len() as u32).to_le_bytes())?;
        out.write_all(t.name.as_bytes())?;
        out.write_all(&(t.dims.len() as u32).to_le_bytes())?;
        for d in &t.dims {
            out.write_all(&(*d as u32).to_le_bytes())?;
        }
        for v in &t.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::UnexpectedEof)?;
        let s = self.buf.get(self.pos..end).ok_or(Error::UnexpectedEof)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_weights(bytes: &[u8]) -> Result<Vec<WeightTensor>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let magic = c.take(4)?;
    if magic != MAGIC {
        return Err(Error::BadMagic([magic[0], magic[1], magic[2], magic[3]]));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(bytes.len() / 8));
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::MalformedWeights(format!("tensor name at byte {} is not UTF-8", c.pos - len)))?
            .to_string();
        let rank = c.u32()? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(c.u32()? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .ok_or_else(|| Error::MalformedWeights(format!("{name}: element count overflows")))?;
        let raw = c.take(numel.checked_mul(4).ok_or(Error::UnexpectedEof)?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push(WeightTensor { name, dims, data });
    }
    if c.pos != bytes.len() {
        return Err(Error::MalformedWeights(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - c.pos
        )));
    }
    Ok(out)
}

impl<T: Real> LsZoneModel<T> {
    /// Parameters in registration order, narrowed to f32.
    pub fn weight_tensors(&self) -> Vec<WeightTensor> {
        self.store
            .params()
            .iter()
            .map(|(info, v)| WeightTensor {
                name: info.name.clone(),
                dims: info.shape.clone(),
                data: v.iter().map(|x| x.as_f64() as f32).collect(),
            })
            .collect()
    }

    /// Replaces every parameter from `tensors`, which must match the
    /// registered names and shapes exactly.
    pub fn load_tensors(&mut self, tensors: &[WeightTensor]) -> Result<()> {
        let mut by_name: HashMap<&str, &WeightTensor> = HashMap::new();
        for t in tensors {
            if by_name.insert(t.name.as_str(), t).is_some() {
                return Err(Error::MalformedWeights(format!("duplicate tensor {}", t.name)));
            }
        }
        let infos = self.store.params().info().to_vec();
        for info in &infos {
            let t = by_name
                .remove(info.name.as_str())
                .ok_or_else(|| Error::MalformedWeights(format!("missing tensor {}", info.name)))?;
            if t.dims != info.shape {
                return Err(Error::ShapeMismatch(info.name.clone()));
            }
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::MalformedWeights(format!("unexpected tensor {extra}")));
        }
        let src: HashMap<&str, &WeightTensor> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        for (info, v) in self.store.params_mut().iter_mut() {
            for (dst, x) in v.iter_mut().zip(&src[info.name.as_str()].data) {
                *dst = T::cst(*x as f64);
            }
        }
        Ok(())
    }
}

pub fn save_weights<T: Real>(model: &LsZoneModel<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_weights(&mut buf, &model.weight_tensors()).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Loads a file and validates it against `config`.
pub fn load_weights<T: Real>(path: &Path, config: &ModelConfig, stft: &StftConfig) -> Result<LsZoneModel<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors = read_weights(&bytes)?;
    let mut model = LsZoneModel::uninitialized(config, stft)?;
    model.load_tensors(&tensors)?;
    Ok(model)
}

/// Recovers the architecture from tensor shapes. The gate mode leaves no
/// trace in the weights and must be supplied.
pub fn infer_config(tensors: &[WeightTensor], gate_mode: GateMode) -> Result<(ModelConfig, StftConfig)> {
    let dims = |name: &str| -> Result<&[usize]> {
        tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.dims.as_slice())
            .ok_or_else(|| Error::MalformedWeights(format!("missing tensor {name}")))
    };
    let expect = |name: &str, rank: usize| -> Result<&[usize]> {
        let d = dims(name)?;
        if d.len() != rank {
            return Err(Error::ShapeMismatch(name.to_string()));
        }
        Ok(d)
    };
    let dec = expect("decoder.weight", 2)?;
    let (zones, hidden) = (dec[0], dec[1]);
    let enc = expect("encoder.weight", 3)?;
    let kernel = enc[2];
    let proj = expect("spaiec.squeeze.project.weight", 2)?;
    let (n_mel, bins) = (proj[0], proj[1]);
    if bins < 2 {
        return Err(Error::ShapeMismatch("spaiec.squeeze.project.weight".into()));
    }
    let blocks = (0..)
        .take_while(|i| tensors.iter().any(|t| t.name.starts_with(&format!("cnp.{i}."))))
        .count();
    let defaults = ModelConfig::default();
    let (hidden_units, groups) = if blocks > 0 {
        let hh = expect("cnp.0.narrowband.gru.w_hh", 2)?;
        let g = expect("cnp.0.crossband.gconv.weight", 3)?;
        if g[1] == 0 || hidden % g[1] != 0 {
            return Err(Error::ShapeMismatch("cnp.0.crossband.gconv.weight".into()));
        }
        (hh[1], hidden / g[1])
    } else {
        (defaults.hidden_units, defaults.groups)
    };
    let fft = 2 * (bins - 1);
    let stft = StftConfig {
        win_len: fft,
        hop: fft / 2,
        fft_size: fft,
        ..StftConfig::default()
    };
    let config = ModelConfig {
        zones,
        n_mel,
        hidden,
        hidden_units,
        blocks,
        kernel,
        groups,
        gate_mode,
    };
    config.validate(&stft)?;
    Ok((config, stft))
}
