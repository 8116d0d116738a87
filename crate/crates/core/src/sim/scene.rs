//! Scene description, per-zone image rendering, and SIR/SNR mixing.

use std::path::PathBuf;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::layout::ZoneLayout;
use super::room::{generate_rir_with, Position, RoomSpec};
use super::split_seed;
use crate::error::{Error, Result};

pub const SIR_RANGE_DB: (f64, f64) = (-6.0, 6.0);
pub const SNR_RANGE_DB: (f64, f64) = (-10.0, 20.0);
/// Mixtures whose peak exceeds this are scaled down as a whole.
pub const PEAK_LIMIT: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceSpec {
    Synthetic { seed: u64 },
    File { path: PathBuf, offset: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerSpec {
    pub zone: usize,
    pub source: SourceSpec,
    pub position: Position,
    /// Ignored for speaker 0, which is the reference.
    pub sir_db: f64,
    pub rir_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub position: Position,
    pub seed: u64,
    pub rir_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub clip_id: String,
    pub split: String,
    pub rt60: f64,
    pub samples: usize,
    pub active_zones: Vec<usize>,
    pub speakers: Vec<SpeakerSpec>,
    pub noise: NoiseSpec,
    pub snr_db: f64,
}

impl SceneManifest {
    pub fn validate(&self, zones: usize) -> Result<()> {
        let p = self.speakers.len();
        if p == 0 || p > zones {
            return Err(Error::Config(format!("{}: {p} speakers for {zones} zones", self.clip_id)));
        }
        let mut seen = vec![false; zones];
        for s in &self.speakers {
            if s.zone >= zones {
                return Err(Error::Config(format!("{}: zone {} out of range", self.clip_id, s.zone)));
            }
            if std::mem::replace(&mut seen[s.zone], true) {
                return Err(Error::ZoneOccupied(s.zone));
            }
        }
        for s in &self.speakers[1..] {
            if !(SIR_RANGE_DB.0..=SIR_RANGE_DB.1).contains(&s.sir_db) {
                return Err(Error::Config(format!("{}: SIR {} dB outside [-6, 6]", self.clip_id, s.sir_db)));
            }
        }
        if !(SNR_RANGE_DB.0..=SNR_RANGE_DB.1).contains(&self.snr_db) {
            return Err(Error::Config(format!("{}: SNR {} dB outside [-10, 20]", self.clip_id, self.snr_db)));
        }
        let mut active: Vec<usize> = self.speakers.iter().map(|s| s.zone).collect();
        active.sort_unstable();
        if active != self.active_zones {
            return Err(Error::Config(format!("{}: active_zones disagrees with speakers", self.clip_id)));
        }
        Ok(())
    }
}

pub struct DrySpeaker<'a> {
    pub zone: usize,
    pub position: Position,
    pub signal: &'a [f64],
    pub rir_seed: u64,
}

pub struct DryNoise<'a> {
    pub position: Position,
    pub signal: &'a [f64],
    pub rir_seed: u64,
}

/// Reverberant images `[source][mic][sample]`.
#[derive(Debug, Clone)]
pub struct ZoneImages {
    pub zones: Vec<usize>,
    pub speakers: Vec<Vec<Vec<f64>>>,
    pub noise: Vec<Vec<f64>>,
}

/// Linear convolution of `x` with each filter, truncated to `len`.
pub fn fft_convolve(x: &[f64], filters: &[Vec<f64>], len: usize) -> Vec<Vec<f64>> {
    let longest = filters.iter().map(Vec::len).max().unwrap_or(0);
    if x.is_empty() || longest == 0 {
        return vec![vec![0.0; len]; filters.len()];
    }
    let n = (x.len().min(len) + longest - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut xs: Vec<Complex<f64>> = vec![Complex::default(); n];
    for (d, s) in xs.iter_mut().zip(x.iter().take(len)) {
        d.re = *s;
    }
    fwd.process(&mut xs);
    filters
        .iter()
        .map(|h| {
            let mut hs: Vec<Complex<f64>> = vec![Complex::default(); n];
            for (d, s) in hs.iter_mut().zip(h) {
                d.re = *s;
            }
            fwd.process(&mut hs);
            for (a, b) in hs.iter_mut().zip(&xs) {
                *a *= b;
            }
            inv.process(&mut hs);
            let scale = 1.0 / n as f64;
            (0..len).map(|i| if i < n { hs[i].re * scale } else { 0.0 }).collect()
        })
        .collect()
}

fn rir_set(room: &RoomSpec, beta: f64, layout: &ZoneLayout, src: &Position, seed: u64) -> Result<Vec<Vec<f64>>> {
    layout
        .mics
        .iter()
        .enumerate()
        .map(|(m, mic)| generate_rir_with(room, beta, src, mic, split_seed(seed, m as u64)))
        .collect()
}

/// Convolves every source with its RIR to each mic.
pub fn render_zone_images(
    room: &RoomSpec,
    layout: &ZoneLayout,
    speakers: &[DrySpeaker<'_>],
    noise: &DryNoise<'_>,
    len: usize,
) -> Result<ZoneImages> {
    let mut seen = vec![false; layout.zones()];
    for s in speakers {
        let slot = seen
            .get_mut(s.zone)
            .ok_or_else(|| Error::Config(format!("zone {} out of range", s.zone)))?;
        if std::mem::replace(slot, true) {
            return Err(Error::ZoneOccupied(s.zone));
        }
    }
    let beta = room.reflection()?;
    let mut images = Vec::with_capacity(speakers.len());
    for s in speakers {
        let rirs = rir_set(room, beta, layout, &s.position, s.rir_seed)?;
        images.push(fft_convolve(s.signal, &rirs, len));
    }
    let rirs = rir_set(room, beta, layout, &noise.position, noise.rir_seed)?;
    Ok(ZoneImages {
        zones: speakers.iter().map(|s| s.zone).collect(),
        speakers: images,
        noise: fft_convolve(noise.signal, &rirs, len),
    })
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

fn mean_power(ch: &[Vec<f64>]) -> f64 {
    ch.iter().map(|c| power(c)).sum::<f64>() / ch.len().max(1) as f64
}

/// `mixture = Σ gains[i]·speakers[i] + noise_gain·noise`; target channel `j`
/// is the scaled zone-`j` speaker's image at mic `j`.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub mixture: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
    pub speaker_gains: Vec<f64>,
    pub noise_gain: f64,
}

/// Own-zone power of speaker `i`.
pub fn own_zone_power(images: &ZoneImages, i: usize) -> f64 {
    power(&images.speakers[i][images.zones[i]])
}

/// Channel-averaged power of `Σ gains[i]·speakers[i]`.
pub fn speech_power(images: &ZoneImages, gains: &[f64]) -> f64 {
    mean_power(&sum_speech(images, gains))
}

pub fn noise_power(images: &ZoneImages) -> f64 {
    mean_power(&images.noise)
}

fn sum_speech(images: &ZoneImages, gains: &[f64]) -> Vec<Vec<f64>> {
    let (zones, len) = (images.noise.len(), images.noise.first().map_or(0, Vec::len));
    let mut out = vec![vec![0.0; len]; zones];
    for (img, g) in images.speakers.iter().zip(gains) {
        for (o, c) in out.iter_mut().zip(img) {
            for (a, b) in o.iter_mut().zip(c) {
                *a += g * b;
            }
        }
    }
    out
}

/// Scales interferers to their SIR against speaker 0 and the noise to the
/// scene SNR, then builds mixture and target.
pub fn mix_scene(images: &ZoneImages, manifest: &SceneManifest) -> Result<Mixture> {
    if images.speakers.len() != manifest.speakers.len() {
        return Err(Error::shape(format!(
            "{} images for {} speakers",
            images.speakers.len(),
            manifest.speakers.len()
        )));
    }
    let p_ref = own_zone_power(images, 0);
    if p_ref <= 0.0 {
        return Err(Error::SilentSource(format!("{} speaker 0", manifest.clip_id)));
    }
    let mut gains = vec![1.0];
    for (i, s) in manifest.speakers.iter().enumerate().skip(1) {
        let p = own_zone_power(images, i);
        if p <= 0.0 {
            return Err(Error::SilentSource(format!("{} speaker {i}", manifest.clip_id)));
        }
        gains.push((p_ref / (p * 10f64.powf(s.sir_db / 10.0))).sqrt());
    }
    let p_speech = speech_power(images, &gains);
    let p_noise = noise_power(images);
    if p_noise <= 0.0 {
        return Err(Error::SilentSource(format!("{} noise", manifest.clip_id)));
    }
    let mut noise_gain = (p_speech / (p_noise * 10f64.powf(manifest.snr_db / 10.0))).sqrt();

    let compose = |gains: &[f64], ng: f64| {
        let mut mix = sum_speech(images, gains);
        for (o, c) in mix.iter_mut().zip(&images.noise) {
            for (a, b) in o.iter_mut().zip(c) {
                *a += ng * b;
            }
        }
        mix
    };
    let mut mixture = compose(&gains, noise_gain);
    let peak = mixture.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > PEAK_LIMIT {
        let k = PEAK_LIMIT / peak;
        gains.iter_mut().for_each(|g| *g *= k);
        noise_gain *= k;
        mixture = compose(&gains, noise_gain);
    }

    let len = mixture.first().map_or(0, Vec::len);
    let mut target = vec![vec![0.0; len]; mixture.len()];
    for ((img, &z), g) in images.speakers.iter().zip(&images.zones).zip(&gains) {
        target[z] = img[z].iter().map(|v| g * v).collect();
    }
    Ok(Mixture {
        mixture,
        target,
        speaker_gains: gains,
        noise_gain,
    })
}
