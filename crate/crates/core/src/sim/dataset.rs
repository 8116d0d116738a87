//! Seeded, parallel dataset generation: a JSONL manifest plus one mixture and
//! one target WAV per clip.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layout::ZoneLayout;
use super::room::RoomSpec;
use super::scene::{
    mix_scene, render_zone_images, DryNoise, DrySpeaker, Mixture, NoiseSpec, SceneManifest, SourceSpec, SpeakerSpec,
    SIR_RANGE_DB, SNR_RANGE_DB,
};
use super::source::{cabin_noise, file_excerpt, list_wavs, synthetic_speech};
use super::split_seed;
use crate::error::{Error, Result};
use crate::wav::{encode_wav, read_wav, Channels, SampleFormat, SAMPLE_RATE};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl Split {
    pub fn id(self) -> u64 {
        self as u64
    }

    /// Places a 62-bit hash under the split id, so seeds never collide
    /// across splits.
    pub fn partition(self, h: u64) -> u64 {
        (self.id() << 62) | (h >> 2)
    }

    pub fn of_seed(seed: u64) -> u64 {
        seed >> 62
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub count: usize,
    pub seed: u64,
    pub split: Split,
    pub clip_seconds: f64,
    pub rt60_range: [f64; 2],
    pub speakers_range: [usize; 2],
    pub format: SampleFormat,
    /// Draw speech from these WAV files instead of the synthetic generator.
    pub wav_dir: Option<PathBuf>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            count: 10,
            seed: 0,
            split: Split::Train,
            clip_seconds: 3.0,
            rt60_range: [0.05, 0.09],
            speakers_range: [1, 6],
            format: SampleFormat::Pcm16,
            wav_dir: None,
        }
    }
}

impl SimulateConfig {
    pub fn samples(&self) -> usize {
        (self.clip_seconds * SAMPLE_RATE as f64).round() as usize
    }

    pub fn validate(&self, zones: usize) -> Result<()> {
        let [lo, hi] = self.rt60_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("bad rt60 range [{lo}, {hi}]")));
        }
        RoomSpec::cabin(lo).sabine_absorption()?;
        let [a, b] = self.speakers_range;
        if a == 0 || a > b || b > zones {
            return Err(Error::Config(format!("speaker range [{a}, {b}] must lie in [1, {zones}]")));
        }
        if self.samples() == 0 {
            return Err(Error::Config("clip length must be positive".into()));
        }
        Ok(())
    }
}

/// Draws the full description of clip `index`. Pure in `(cfg, index)`.
pub fn sample_manifest(cfg: &SimulateConfig, layout: &ZoneLayout, wavs: Option<&[PathBuf]>, index: usize) -> SceneManifest {
    let split = cfg.split;
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, (split.id() << 40) | index as u64));
    let room = RoomSpec::cabin(cfg.rt60_range[0]);
    let rt60 = if cfg.rt60_range[0] < cfg.rt60_range[1] {
        rng.random_range(cfg.rt60_range[0]..=cfg.rt60_range[1])
    } else {
        cfg.rt60_range[0]
    };
    let p = rng.random_range(cfg.speakers_range[0]..=cfg.speakers_range[1]);
    let zones = sample(&mut rng, layout.zones(), p).into_vec();
    let speakers: Vec<SpeakerSpec> = zones
        .iter()
        .enumerate()
        .map(|(i, &zone)| {
            let source = match wavs {
                Some(files) => SourceSpec::File {
                    path: files[rng.random_range(0..files.len())].clone(),
                    offset: rng.random_range(0..1 << 24),
                },
                None => SourceSpec::Synthetic {
                    seed: split.partition(rng.random()),
                },
            };
            SpeakerSpec {
                zone,
                source,
                position: layout.jittered_seat(zone, &mut rng),
                sir_db: if i == 0 { 0.0 } else { rng.random_range(SIR_RANGE_DB.0..=SIR_RANGE_DB.1) },
                rir_seed: split.partition(rng.random()),
            }
        })
        .collect();
    let mut active_zones = zones;
    active_zones.sort_unstable();
    let noise = NoiseSpec {
        position: layout.random_noise_position(&room, &mut rng),
        seed: split.partition(rng.random()),
        rir_seed: split.partition(rng.random()),
    };
    SceneManifest {
        clip_id: format!("{split}-{index:05}"),
        split: split.to_string(),
        rt60,
        samples: cfg.samples(),
        active_zones,
        speakers,
        noise,
        snr_db: rng.random_range(SNR_RANGE_DB.0..=SNR_RANGE_DB.1),
    }
}

fn dry_source(spec: &SourceSpec, len: usize) -> Result<Vec<f64>> {
    match spec {
        SourceSpec::Synthetic { seed } => Ok(synthetic_speech(*seed, len, SAMPLE_RATE)),
        SourceSpec::File { path, offset } => file_excerpt(path, *offset, len),
    }
}

/// Renders and mixes one manifest entry.
pub fn render_clip(manifest: &SceneManifest, layout: &ZoneLayout) -> Result<Mixture> {
    manifest.validate(layout.zones())?;
    let room = RoomSpec::cabin(manifest.rt60);
    let len = manifest.samples;
    let dry: Vec<Vec<f64>> = manifest
        .speakers
        .iter()
        .map(|s| dry_source(&s.source, len))
        .collect::<Result<_>>()?;
    let speakers: Vec<DrySpeaker> = manifest
        .speakers
        .iter()
        .zip(&dry)
        .map(|(s, d)| DrySpeaker {
            zone: s.zone,
            position: s.position,
            signal: d,
            rir_seed: s.rir_seed,
        })
        .collect();
    let noise_sig = cabin_noise(manifest.noise.seed, len, SAMPLE_RATE);
    let noise = DryNoise {
        position: manifest.noise.position,
        signal: &noise_sig,
        rir_seed: manifest.noise.rir_seed,
    };
    let images = render_zone_images(&room, layout, &speakers, &noise, len)?;
    mix_scene(&images, manifest)
}

pub fn mix_path(dir: &Path, clip_id: &str) -> PathBuf {
    dir.join(format!("{clip_id}_mix.wav"))
}

pub fn target_path(dir: &Path, clip_id: &str) -> PathBuf {
    dir.join(format!("{clip_id}_target.wav"))
}

fn to_f32(x: &[Vec<f64>]) -> Channels {
    x.iter().map(|c| c.iter().map(|&v| v as f32).collect()).collect()
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Generates `cfg.count` clips into `out`. Clips are independent and rendered
/// in parallel; every output byte depends only on `cfg`.
pub fn build_dataset(cfg: &SimulateConfig, out: &Path) -> Result<Vec<SceneManifest>> {
    let layout = ZoneLayout::cabin();
    cfg.validate(layout.zones())?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let wavs = cfg.wav_dir.as_deref().map(list_wavs).transpose()?;
    let manifests: Vec<SceneManifest> = (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let m = sample_manifest(cfg, &layout, wavs.as_deref(), i);
            let mix = render_clip(&m, &layout)?;
            write_bytes(&mix_path(out, &m.clip_id), &encode_wav(&to_f32(&mix.mixture), cfg.format)?)?;
            write_bytes(&target_path(out, &m.clip_id), &encode_wav(&to_f32(&mix.target), cfg.format)?)?;
            Ok(m)
        })
        .collect::<Result<_>>()?;
    write_manifest(&out.join(MANIFEST_FILE), &manifests)?;
    Ok(manifests)
}

pub fn write_manifest(path: &Path, manifests: &[SceneManifest]) -> Result<()> {
    let mut buf = Vec::new();
    for m in manifests {
        serde_json::to_writer(&mut buf, m).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<SceneManifest>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: format!("line {}: {e}", n + 1),
        })?);
    }
    Ok(out)
}

/// Mixture and target of one clip from a built dataset directory.
pub fn load_clip(dir: &Path, clip_id: &str) -> Result<(Channels, Channels)> {
    let mix = read_wav(&mix_path(dir, clip_id))?;
    let target = read_wav(&target_path(dir, clip_id))?;
    if mix.len() != target.len() || mix.first().map(Vec::len) != target.first().map(Vec::len) {
        return Err(Error::shape(format!("{clip_id}: mixture and target shapes differ")));
    }
    Ok((mix, target))
}
