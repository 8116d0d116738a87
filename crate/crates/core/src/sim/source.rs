//! Dry sources: seeded speech-like signals, stationary cabin noise, and
//! excerpts from a directory of WAV files.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::wav::read_wav;

/// RMS every dry source is normalized to.
pub const SOURCE_RMS: f64 = 0.05;

struct Pink {
    b: [f64; 3],
}

impl Pink {
    // Kellet's three-pole approximation of a -3 dB/octave slope
    fn next(&mut self, w: f64) -> f64 {
        self.b[0] = 0.99765 * self.b[0] + w * 0.0990460;
        self.b[1] = 0.96300 * self.b[1] + w * 0.2965164;
        self.b[2] = 0.57000 * self.b[2] + w * 1.0526913;
        self.b[0] + self.b[1] + self.b[2] + w * 0.1848
    }
}

struct OnePole {
    a: f64,
    y: f64,
}

impl OnePole {
    fn lowpass(cut_hz: f64, fs: f64) -> Self {
        Self {
            a: (-2.0 * std::f64::consts::PI * cut_hz / fs).exp(),
            y: 0.0,
        }
    }
    fn next(&mut self, x: f64) -> f64 {
        self.y = (1.0 - self.a) * x + self.a * self.y;
        self.y
    }
}

fn normalize(x: &mut [f64]) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        let g = SOURCE_RMS / rms;
        x.iter_mut().for_each(|v| *v *= g);
    }
}

/// Band-limited, syllable-modulated mixture of a glottal-like pulse train and
/// pink noise, with pauses and a falling spectral tilt. Deterministic in `seed`; never all-zero for
/// `len > 0.3·fs`.
pub fn synthetic_speech(seed: u64, len: usize, sample_rate: u32) -> Vec<f64> {
    let fs = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut env = vec![0.0; len];
    let mut pos = (rng.random_range(0.0..0.3) * fs) as usize;
    while pos < len {
        let dur = (rng.random_range(0.12..0.30) * fs) as usize;
        let amp = rng.random_range(0.5..1.0);
        for i in 0..dur.min(len - pos) {
            let ph = i as f64 / dur as f64;
            env[pos + i] = amp * (std::f64::consts::PI * ph).sin().powi(2);
        }
        pos += dur;
        let gap = if rng.random_bool(0.15) {
            rng.random_range(0.2..0.5)
        } else {
            rng.random_range(0.0..0.05)
        };
        pos += (gap * fs) as usize;
    }

    let f0 = rng.random_range(100.0..250.0);
    let vib_rate = rng.random_range(3.0..6.0);
    let voicing = rng.random_range(0.7..0.9);
    // long-term speech spectra fall off steeply above a few hundred Hz
    let mut tilt = OnePole::lowpass(800.0, fs);
    let mut pink = Pink { b: [0.0; 3] };
    let mut lp1 = OnePole::lowpass(3500.0, fs);
    let mut lp2 = OnePole::lowpass(3500.0, fs);
    let mut hp = OnePole::lowpass(100.0, fs);
    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(len);
    for (n, e) in env.iter().enumerate() {
        let t = n as f64 / fs;
        let f = f0 * (1.0 + 0.05 * (2.0 * std::f64::consts::PI * vib_rate * t).sin());
        phase = (phase + f / fs).fract();
        let pulse = 2.0 * phase - 1.0;
        let w: f64 = rng.sample(StandardNormal);
        let x = voicing * pulse + (1.0 - voicing) * pink.next(w) * 0.2;
        let y = lp2.next(lp1.next(tilt.next(x)));
        out.push((y - hp.next(y)) * e);
    }
    normalize(&mut out);
    out
}

/// Stationary low-frequency-weighted pink noise, the cabin road/engine proxy.
pub fn cabin_noise(seed: u64, len: usize, sample_rate: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pink = Pink { b: [0.0; 3] };
    let mut lp = OnePole::lowpass(1000.0, sample_rate as f64);
    let mut out: Vec<f64> = (0..len)
        .map(|_| {
            let p = pink.next(rng.sample(StandardNormal));
            0.5 * p + lp.next(p)
        })
        .collect();
    normalize(&mut out);
    out
}

/// Sorted `.wav` files directly inside `dir`.
pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Parse {
            path: dir.to_path_buf(),
            msg: "no .wav files".into(),
        });
    }
    Ok(files)
}

/// First channel of `path` starting at `offset`, looped to `len` samples and
/// RMS-normalized.
pub fn file_excerpt(path: &Path, offset: usize, len: usize) -> Result<Vec<f64>> {
    let ch = read_wav(path)?;
    let x = ch.first().filter(|c| !c.is_empty()).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        msg: "empty audio".into(),
    })?;
    let mut out: Vec<f64> = (0..len).map(|i| x[(offset + i) % x.len()] as f64).collect();
    normalize(&mut out);
    Ok(out)
}
