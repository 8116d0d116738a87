//! Causal short-time Fourier analysis and weighted overlap-add synthesis.
//!
//! Frames are not center padded: frame `t` covers samples
//! `[t * hop, t * hop + win_len)`, so a frame only ever depends on samples
//! that have already arrived.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Window-sum values below this are treated as uncovered samples.
pub const WINDOW_SUM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub win_len: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Default for StftConfig {
    /// 32 ms periodic Hann window with a 16 ms hop at 16 kHz.
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            win_len: 512,
            hop: 256,
            fft_size: 512,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate != 16_000 {
            return Err(Error::Config(format!(
                "sample_rate must be 16000, got {}",
                self.sample_rate
            )));
        }
        if self.hop == 0 || self.hop * 2 != self.win_len {
            return Err(Error::Config(format!(
                "hop ({}) must be exactly half of win_len ({})",
                self.hop, self.win_len
            )));
        }
        if self.fft_size < self.win_len {
            return Err(Error::Config(format!(
                "fft_size ({}) must be ≥ win_len ({})",
                self.fft_size, self.win_len
            )));
        }
        Ok(())
    }

    /// Number of non-negative frequency bins, `F`.
    pub fn freq_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a signal of `n` samples (zero when shorter than a window).
    pub fn frames_for(&self, n: usize) -> usize {
        if n < self.win_len {
            0
        } else {
            1 + (n - self.win_len) / self.hop
        }
    }

    pub fn frames_per_second(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    /// Periodic Hann window of length `win_len`.
    pub fn window<T: Real>(&self) -> Vec<T> {
        let n = self.win_len as f64;
        (0..self.win_len)
            .map(|i| T::cst(0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos()))
            .collect()
    }
}

/// Complex half-spectra for every channel and frame.
///
/// Indexed `[channel, frequency, frame]`; stored frame-major per channel so a
/// single frame's spectrum is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram<T> {
    channels: usize,
    bins: usize,
    frames: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> ComplexSpectrogram<T> {
    pub fn zeros(channels: usize, bins: usize, frames: usize) -> Self {
        Self {
            channels,
            bins,
            frames,
            data: vec![Complex::new(T::zero(), T::zero()); channels * bins * frames],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn bins(&self) -> usize {
        self.bins
    }
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    fn offset(&self, z: usize, f: usize, t: usize) -> usize {
        (z * self.frames + t) * self.bins + f
    }

    #[inline]
    pub fn get(&self, z: usize, f: usize, t: usize) -> Complex<T> {
        self.data[self.offset(z, f, t)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, f: usize, t: usize, v: Complex<T>) {
        let o = self.offset(z, f, t);
        self.data[o] = v;
    }

    /// Spectrum of channel `z` at frame `t`, `F` bins long.
    pub fn frame(&self, z: usize, t: usize) -> &[Complex<T>] {
        let o = self.offset(z, 0, t);
        &self.data[o..o + self.bins]
    }

    pub fn frame_mut(&mut self, z: usize, t: usize) -> &mut [Complex<T>] {
        let o = self.offset(z, 0, t);
        &mut self.data[o..o + self.bins]
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    /// Phase of every entry, `atan2(im, re)`; zero for zero entries.
    pub fn phase(&self, z: usize, f: usize, t: usize) -> T {
        let c = self.get(z, f, t);
        c.im.atan2(c.re)
    }

    /// Unit phasor `(cos φ, sin φ)` of an entry, `(1, 0)` when it is zero.
    #[inline]
    pub fn phasor(&self, z: usize, f: usize, t: usize) -> (T, T) {
        let c = self.get(z, f, t);
        let m = c.norm();
        if m > T::zero() {
            (c.re / m, c.im / m)
        } else {
            (T::one(), T::zero())
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Keep only frames `start..end`.
    pub fn slice_frames(&self, start: usize, end: usize) -> Self {
        let frames = end - start;
        let mut out = Self::zeros(self.channels, self.bins, frames);
        for z in 0..self.channels {
            for t in 0..frames {
                out.frame_mut(z, t).copy_from_slice(self.frame(z, start + t));
            }
        }
        out
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> T {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Reusable FFT plans and window for one [`StftConfig`].
#[derive(Clone)]
pub struct Stft<T: Real> {
    cfg: StftConfig,
    window: Vec<T>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Real> std::fmt::Debug for Stft<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("cfg", &self.cfg).finish()
    }
}

impl<T: Real> Stft<T> {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg,
            window: cfg.window(),
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn window(&self) -> &[T] {
        &self.window
    }

    /// Spectrum of one `win_len` frame into `out` (`F` bins).
    pub fn analyze_frame(&self, frame: &[T], out: &mut [Complex<T>]) {
        let n = self.cfg.fft_size;
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for (i, (x, w)) in frame.iter().zip(&self.window).enumerate() {
            buf[i] = Complex::new(*x * *w, T::zero());
        }
        self.forward.process(&mut buf);
        out.copy_from_slice(&buf[..self.cfg.freq_bins()]);
    }

    /// Inverse transform of one half-spectrum, multiplied by the synthesis
    /// window. Returns `win_len` samples (not yet window-sum normalized).
    pub fn synthesize_frame(&self, spectrum: &[Complex<T>], out: &mut [T]) {
        let n = self.cfg.fft_size;
        let bins = self.cfg.freq_bins();
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        buf[..bins].copy_from_slice(spectrum);
        for k in bins..n {
            buf[k] = spectrum[n - k].conj();
        }
        // DC and Nyquist must be real for a real signal.
        buf[0].im = T::zero();
        if n % 2 == 0 {
            buf[n / 2].im = T::zero();
        }
        self.inverse.process(&mut buf);
        let scale = T::one() / T::cst(n as f64);
        for (i, o) in out.iter_mut().enumerate().take(self.cfg.win_len) {
            *o = buf[i].re * scale * self.window[i];
        }
    }

    pub fn analyze(&self, wave: &[Vec<T>]) -> Result<ComplexSpectrogram<T>> {
        let channels = wave.len();
        if channels == 0 {
            return Err(Error::shape("waveform has no channels"));
        }
        let n = wave[0].len();
        if wave.iter().any(|c| c.len() != n) {
            return Err(Error::shape("channels differ in length"));
        }
        if n < self.cfg.win_len {
            return Err(Error::InputTooShort {
                got: n,
                need: self.cfg.win_len,
            });
        }
        if wave.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let frames = self.cfg.frames_for(n);
        let mut spec = ComplexSpectrogram::zeros(channels, self.cfg.freq_bins(), frames);
        for (z, ch) in wave.iter().enumerate() {
            for t in 0..frames {
                let start = t * self.cfg.hop;
                self.analyze_frame(&ch[start..start + self.cfg.win_len], spec.frame_mut(z, t));
            }
        }
        Ok(spec)
    }

    /// Weighted overlap-add resynthesis; output has `(T - 1) * hop + win_len`
    /// samples per channel.
    pub fn synthesize(&self, spec: &ComplexSpectrogram<T>) -> Result<Vec<Vec<T>>> {
        if spec.bins() != self.cfg.freq_bins() {
            return Err(Error::shape(format!(
                "spectrogram has {} bins, expected {}",
                spec.bins(),
                self.cfg.freq_bins()
            )));
        }
        let frames = spec.frames();
        if frames == 0 {
            return Ok(vec![Vec::new(); spec.channels()]);
        }
        let (hop, win) = (self.cfg.hop, self.cfg.win_len);
        let len = (frames - 1) * hop + win;
        let mut wsum = vec![T::zero(); len];
        for t in 0..frames {
            for (i, w) in self.window.iter().enumerate() {
                wsum[t * hop + i] += *w * *w;
            }
        }
        let floor = T::cst(WINDOW_SUM_FLOOR);
        let mut frame = vec![T::zero(); win];
        let mut out = Vec::with_capacity(spec.channels());
        for z in 0..spec.channels() {
            let mut y = vec![T::zero(); len];
            for t in 0..frames {
                self.synthesize_frame(spec.frame(z, t), &mut frame);
                for (i, v) in frame.iter().enumerate() {
                    y[t * hop + i] += *v;
                }
            }
            for (v, s) in y.iter_mut().zip(&wsum) {
                *v = if *s > floor { *v / *s } else { T::zero() };
            }
            out.push(y);
        }
        Ok(out)
    }
}

/// One-shot analysis with freshly planned FFTs.
pub fn stft<T: Real>(wave: &[Vec<T>], cfg: &StftConfig) -> Result<ComplexSpectrogram<T>> {
    Stft::new(*cfg)?.analyze(wave)
}

/// One-shot synthesis with freshly planned FFTs.
pub fn istft<T: Real>(spec: &ComplexSpectrogram<T>, cfg: &StftConfig) -> Result<Vec<Vec<T>>> {
    Stft::new(*cfg)?.synthesize(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn cfg() -> StftConfig {
        StftConfig::default()
    }

    #[test]
    fn default_config_has_257_bins() {
        let c = cfg();
        c.validate().unwrap();
        assert_eq!(c.freq_bins(), 257);
        assert_eq!(c.hop * 2, c.win_len);
    }

    #[test]
    fn three_second_clip_has_186_frames() {
        assert_eq!(cfg().frames_for(48_000), 186);
        let wave = vec![vec![0.0f64; 48_000]];
        assert_eq!(stft(&wave, &cfg()).unwrap().frames(), 186);
    }

    #[test]
    fn short_input_is_rejected() {
        let wave = vec![vec![0.0f32; 511]];
        assert!(matches!(
            stft(&wave, &cfg()),
            Err(Error::InputTooShort { got: 511, need: 512 })
        ));
    }

    #[test]
    fn zero_wave_gives_zero_spectrogram() {
        let wave = vec![vec![0.0f64; 1000]; 2];
        let s = stft(&wave, &cfg()).unwrap();
        assert!(s.as_slice().iter().all(|c| c.re == 0.0 && c.im == 0.0));
    }

    #[test]
    fn sine_peaks_at_bin_32_and_matches_direct_dft() {
        let c = cfg();
        let wave: Vec<f64> = (0..2048)
            .map(|n| (2.0 * PI * 1000.0 * n as f64 / 16_000.0).sin())
            .collect();
        let s = stft(&[wave.clone()], &c).unwrap();
        let w: Vec<f64> = c.window();
        for t in 0..s.frames() {
            let peak = (0..s.bins())
                .max_by(|&a, &b| s.get(0, a, t).norm().total_cmp(&s.get(0, b, t).norm()))
                .unwrap();
            assert_eq!(peak, 32);
            // direct DFT oracle on a few bins
            for k in [0usize, 5, 31, 32, 33, 256] {
                let (mut re, mut im) = (0.0, 0.0);
                for n in 0..512 {
                    let x = wave[t * 256 + n] * w[n];
                    let ang = -2.0 * PI * (k * n) as f64 / 512.0;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                let got = s.get(0, k, t);
                assert!((got.re - re).abs() < 1e-9 && (got.im - im).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn round_trip_reconstructs_interior() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let wave: Vec<f64> = (0..8000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = stft(&[wave.clone()], &c).unwrap();
        let y = istft(&s, &c).unwrap();
        let end = s.frames() * c.hop;
        let err = (c.hop..end)
            .map(|n| (y[0][n] - wave[n]).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "err {err}");
    }

    #[test]
    fn single_frame_synthesis_matches_direct_oracle() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut spec = ComplexSpectrogram::<f64>::zeros(1, 257, 1);
        for f in 0..257 {
            let im = if f == 0 || f == 256 { 0.0 } else { rng.random_range(-1.0..1.0) };
            spec.set(0, f, 0, Complex::new(rng.random_range(-1.0..1.0), im));
        }
        let y = istft(&spec, &c).unwrap();
        assert_eq!(y[0].len(), 512);
        let w: Vec<f64> = c.window();
        for n in 0..512 {
            // direct real inverse DFT of the Hermitian extension
            let mut v = spec.get(0, 0, 0).re + spec.get(0, 256, 0).re * (PI * n as f64).cos();
            for k in 1..256 {
                let x = spec.get(0, k, 0);
                let ang = 2.0 * PI * (k * n) as f64 / 512.0;
                v += 2.0 * (x.re * ang.cos() - x.im * ang.sin());
            }
            v /= 512.0;
            let expect = if w[n] * w[n] > WINDOW_SUM_FLOOR { w[n] * v / (w[n] * w[n]) } else { 0.0 };
            assert!((y[0][n] - expect).abs() < 1e-9 * expect.abs().max(1.0), "n={n}");
        }
    }

    #[test]
    fn zero_spectrogram_synthesizes_silence() {
        let spec = ComplexSpectrogram::<f32>::zeros(3, 257, 5);
        let y = istft(&spec, &cfg()).unwrap();
        assert_eq!(y.len(), 3);
        assert!(y.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_bin_count_is_a_shape_mismatch() {
        let spec = ComplexSpectrogram::<f32>::zeros(1, 129, 2);
        assert!(matches!(istft(&spec, &cfg()), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn parseval_energy_matches_windowed_time_energy() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let wave: Vec<f64> = (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = stft(&[wave.clone()], &c).unwrap();
        let w: Vec<f64> = c.window();
        let mut time = 0.0;
        let mut freq = 0.0;
        for t in 0..s.frames() {
            for n in 0..512 {
                time += (wave[t * 256 + n] * w[n]).powi(2);
            }
            // one-sided spectrum: interior bins count twice
            for f in 0..257 {
                let m = s.get(0, f, t).norm_sqr();
                freq += if f == 0 || f == 256 { m } else { 2.0 * m };
            }
        }
        freq /= 512.0;
        assert!((freq - time).abs() / time < 0.01);
    }
}
