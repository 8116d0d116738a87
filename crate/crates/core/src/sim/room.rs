//! Shoebox image-method room impulse responses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width of the fractional-delay interpolator in samples.
const SINC_HALF: isize = 4;
const CALIBRATION_STEPS: usize = 8;

pub type Position = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoomSpec {
    /// Width (x), length (y), height (z) in meters.
    pub dims: [f64; 3],
    pub rt60: f64,
    pub speed_of_sound: f64,
    pub sample_rate: u32,
    pub max_order: usize,
}

impl Default for RoomSpec {
    fn default() -> Self {
        Self::cabin(0.07)
    }
}

impl RoomSpec {
    pub fn cabin(rt60: f64) -> Self {
        Self {
            dims: [1.45, 2.70, 1.25],
            rt60,
            speed_of_sound: 343.0,
            sample_rate: 16_000,
            max_order: 60,
        }
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }

    /// Sabine mean absorption `0.161·V / (S·RT60)`; errors when it exceeds 1.
    pub fn sabine_absorption(&self) -> Result<f64> {
        if !(self.rt60 > 0.0) {
            return Err(Error::Config(format!("rt60 must be positive, got {}", self.rt60)));
        }
        let alpha = 0.161 * self.volume() / (self.surface() * self.rt60);
        if alpha > 1.0 {
            return Err(Error::Absorption { alpha, rt60: self.rt60 });
        }
        Ok(alpha)
    }

    /// `sqrt(1 - ᾱ)` with the Sabine absorption.
    pub fn sabine_reflection(&self) -> Result<f64> {
        Ok((1.0 - self.sabine_absorption()?).sqrt())
    }

    /// Wall reflection coefficient whose image-method RIR decays at the
    /// requested RT60, measured by [`schroeder_t60`] on a fixed reference
    /// source/mic pair. Starts from the Eyring estimate `β² = exp(-0.161·V/(S·RT60))`
    /// and rescales the log-decay rate until the measurement agrees.
    pub fn reflection(&self) -> Result<f64> {
        self.sabine_absorption()?;
        let [x, y, z] = self.dims;
        let src = [0.3 * x, 0.3 * y, 0.4 * z];
        let mic = [0.7 * x, 0.6 * y, 0.8 * z];
        let mut gamma = 0.161 * self.volume() / (self.surface() * self.rt60);
        for _ in 0..CALIBRATION_STEPS {
            let h = generate_rir_with(self, (-gamma / 2.0).exp(), &src, &mic, 0)?;
            let Some(t) = schroeder_t60(&h, self.sample_rate) else { break };
            let ratio = t / self.rt60;
            gamma *= ratio;
            if (ratio - 1.0).abs() < 1e-3 {
                break;
            }
        }
        Ok((-gamma / 2.0).exp())
    }

    /// RIR length in samples: 1.5·RT60, never shorter than RT60.
    pub fn rir_len(&self) -> usize {
        (1.5 * self.rt60 * self.sample_rate as f64).ceil() as usize
    }

    pub fn contains(&self, p: &Position) -> bool {
        p.iter().zip(&self.dims).all(|(v, d)| *v > 0.0 && v < d)
    }
}

fn hann_sinc(x: f64) -> f64 {
    let half = SINC_HALF as f64;
    if x.abs() >= half {
        return 0.0;
    }
    let w = 0.5 * (1.0 + (std::f64::consts::PI * x / half).cos());
    let s = if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    };
    w * s
}

/// Adds an impulse of `amp` at fractional sample `delay` with an 8-tap
/// Hann-windowed sinc.
fn add_fractional(h: &mut [f64], delay: f64, amp: f64) {
    let base = delay.floor() as isize;
    for n in base - SINC_HALF + 1..=base + SINC_HALF {
        if n < 0 || n as usize >= h.len() {
            continue;
        }
        h[n as usize] += amp * hann_sinc(n as f64 - delay);
    }
}

/// Allen-Berkley image method with a uniform, frequency-independent
/// reflection coefficient from [`RoomSpec::reflection`]. `seed` jitters the
/// path length of reflected images by up to ±2 cm; the direct path is exact.
pub fn generate_rir(room: &RoomSpec, src: &Position, mic: &Position, seed: u64) -> Result<Vec<f64>> {
    generate_rir_with(room, room.reflection()?, src, mic, seed)
}

/// [`generate_rir`] with an explicit reflection coefficient, so one
/// calibration can serve many source/mic pairs.
pub fn generate_rir_with(room: &RoomSpec, beta: f64, src: &Position, mic: &Position, seed: u64) -> Result<Vec<f64>> {
    for p in [src, mic] {
        if !room.contains(p) {
            return Err(Error::OutsideRoom(*p));
        }
    }
    if src.iter().zip(mic).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() < 1e-3 {
        return Err(Error::CoincidentPositions);
    }
    let len = room.rir_len();
    let fs = room.sample_rate as f64;
    let max_dist = (len as f64 + SINC_HALF as f64) / fs * room.speed_of_sound;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = vec![0.0; len];
    let l = room.dims;
    let bound = |d: f64| ((max_dist / (2.0 * d)).ceil() as isize + 1).min(room.max_order as isize);
    let (nx, ny, nz) = (bound(l[0]), bound(l[1]), bound(l[2]));
    for a in -nx..=nx {
        for b in -ny..=ny {
            for c in -nz..=nz {
                for parity in 0..8u8 {
                    let q = [(parity & 1) as isize, ((parity >> 1) & 1) as isize, ((parity >> 2) & 1) as isize];
                    let m = [a, b, c];
                    let mut d2 = 0.0;
                    let mut reflections = 0i32;
                    for k in 0..3 {
                        let img = (1 - 2 * q[k]) as f64 * src[k] + 2.0 * m[k] as f64 * l[k];
                        d2 += (img - mic[k]).powi(2);
                        reflections += ((m[k] - q[k]).abs() + m[k].abs()) as i32;
                    }
                    if reflections as usize > room.max_order {
                        continue;
                    }
                    let mut dist = d2.sqrt();
                    if dist > max_dist {
                        continue;
                    }
                    if reflections > 0 {
                        dist += rng.random_range(-0.02..0.02);
                    }
                    let delay = dist / room.speed_of_sound * fs;
                    let amp = beta.powi(reflections) / (4.0 * std::f64::consts::PI * dist);
                    add_fractional(&mut h, delay, amp);
                }
            }
        }
    }
    Ok(h)
}

/// T60 from Schroeder backward integration: a line fitted to the energy
/// decay curve between -5 and -45 dB, extrapolated to -60 dB. The wide
/// window averages over the sparse early reflections of a small cabin.
pub fn schroeder_t60(h: &[f64], sample_rate: u32) -> Option<f64> {
    schroeder_fit(h, sample_rate, -5.0, -45.0)
}

/// Decay fitted between `top` and `floor` dB of the energy decay curve.
pub fn schroeder_fit(h: &[f64], sample_rate: u32, top: f64, floor: f64) -> Option<f64> {
    let mut edc = vec![0.0; h.len()];
    let mut acc = 0.0;
    for i in (0..h.len()).rev() {
        acc += h[i] * h[i];
        edc[i] = acc;
    }
    if acc <= 0.0 {
        return None;
    }
    let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, e) in edc.iter().enumerate() {
        let db = 10.0 * (e / acc).log10();
        if db <= top && db >= floor {
            let t = i as f64 / sample_rate as f64;
            sx += t;
            sy += db;
            sxx += t * t;
            sxy += t * db;
            n += 1.0;
        }
    }
    if n < 2.0 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    (slope < 0.0).then(|| -60.0 / slope)
}
