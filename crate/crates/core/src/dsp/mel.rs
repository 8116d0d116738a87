//! HTK-style triangular Mel filterbank, its nonnegative approximate inverse,
//! and linear-magnitude Mel features.

use crate::dsp::stft::ComplexSpectrogram;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor3;

/// Floor on a filter's area when normalizing the inverse.
pub const MEL_INVERSE_EPS: f64 = 1e-8;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `n_mel × F` matrix of unit-peak triangles, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank<T> {
    n_mel: usize,
    bins: usize,
    fmin: f64,
    fmax: f64,
    weights: Vec<T>,
    /// Nonzero column range of each row.
    support: Vec<(usize, usize)>,
}

impl<T: Real> MelFilterbank<T> {
    /// Triangles between 0 Hz and the Nyquist frequency.
    pub fn new(bins: usize, n_mel: usize, sample_rate: u32) -> Result<Self> {
        Self::with_range(bins, n_mel, sample_rate, 0.0, sample_rate as f64 / 2.0)
    }

    pub fn with_range(
        bins: usize,
        n_mel: usize,
        sample_rate: u32,
        fmin: f64,
        fmax: f64,
    ) -> Result<Self> {
        if n_mel == 0 || n_mel >= bins {
            return Err(Error::Config(format!(
                "n_mel ({n_mel}) must be in 1..F ({bins})"
            )));
        }
        if !(0.0..fmax).contains(&fmin) {
            return Err(Error::Config(format!("invalid mel range {fmin}..{fmax} Hz")));
        }
        let fft_size = 2 * (bins - 1);
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let edges = mel_edges(n_mel, fmin, fmax);
        let mut weights = vec![T::zero(); n_mel * bins];
        let mut support = Vec::with_capacity(n_mel);
        for m in 0..n_mel {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut first = bins;
            let mut last = 0;
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c)).max(0.0);
                if w > 0.0 {
                    weights[m * bins + k] = T::cst(w);
                    first = first.min(k);
                    last = k + 1;
                }
            }
            if first >= last {
                return Err(Error::Config(format!(
                    "mel filter {m} covers no frequency bin; use fewer filters"
                )));
            }
            support.push((first, last));
        }
        Ok(Self {
            n_mel,
            bins,
            fmin,
            fmax,
            weights,
            support,
        })
    }

    pub fn n_mel(&self) -> usize {
        self.n_mel
    }
    pub fn bins(&self) -> usize {
        self.bins
    }
    pub fn range_hz(&self) -> (f64, f64) {
        (self.fmin, self.fmax)
    }

    #[inline]
    pub fn weight(&self, m: usize, f: usize) -> T {
        self.weights[m * self.bins + f]
    }

    pub fn row(&self, m: usize) -> &[T] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }

    /// Half-open range of bins with nonzero weight in row `m`.
    pub fn support(&self, m: usize) -> (usize, usize) {
        self.support[m]
    }

    /// Peak frequency of each triangle in Hz.
    pub fn centers_hz(&self) -> Vec<f64> {
        mel_edges(self.n_mel, self.fmin, self.fmax)[1..=self.n_mel].to_vec()
    }

    /// `out[m] = Σ_f w[m, f] · mag[f]`
    pub fn project(&self, mag: &[T], out: &mut [T]) {
        for (m, o) in out.iter_mut().enumerate().take(self.n_mel) {
            let (a, b) = self.support[m];
            let row = &self.row(m)[a..b];
            *o = row.iter().zip(&mag[a..b]).map(|(w, x)| *w * *x).sum();
        }
    }
}

fn mel_edges(n_mel: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    (0..n_mel + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mel + 1) as f64))
        .collect()
}

pub fn mel_filterbank<T: Real>(bins: usize, n_mel: usize, sample_rate: u32) -> Result<MelFilterbank<T>> {
    MelFilterbank::new(bins, n_mel, sample_rate)
}

/// Per-zone Mel-resolution feature, logically indexed `[m, t, z]`.
///
/// Backed by a [`Tensor3`] with zones as the feature axis and Mel bins as the
/// band axis, which is exactly the layout the encoder convolution consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFeature<T>(pub Tensor3<T>);

impl<T: Real> MelFeature<T> {
    pub fn zeros(n_mel: usize, frames: usize, zones: usize) -> Self {
        Self(Tensor3::zeros(zones, n_mel, frames))
    }

    pub fn n_mel(&self) -> usize {
        self.0.bands()
    }
    pub fn frames(&self) -> usize {
        self.0.frames()
    }
    pub fn zones(&self) -> usize {
        self.0.channels()
    }
    /// `(N_mel, T, Z)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_mel(), self.frames(), self.zones())
    }

    #[inline]
    pub fn get(&self, m: usize, t: usize, z: usize) -> T {
        self.0.get(z, m, t)
    }
    #[inline]
    pub fn set(&mut self, m: usize, t: usize, z: usize, v: T) {
        self.0.set(z, m, t, v)
    }

    pub fn tensor(&self) -> &Tensor3<T> {
        &self.0
    }
    pub fn into_tensor(self) -> Tensor3<T> {
        self.0
    }
}

/// `X_mel[m, t, z] = Σ_f fb[m, f] · |X[z, f, t]|`
pub fn apply_mel<T: Real>(spec: &ComplexSpectrogram<T>, fb: &MelFilterbank<T>) -> Result<MelFeature<T>> {
    if spec.bins() != fb.bins() {
        return Err(Error::shape(format!(
            "spectrogram has {} bins, filterbank expects {}",
            spec.bins(),
            fb.bins()
        )));
    }
    let (zones, frames) = (spec.channels(), spec.frames());
    let mut out = MelFeature::zeros(fb.n_mel(), frames, zones);
    let mut mag = vec![T::zero(); fb.bins()];
    let mut row = vec![T::zero(); fb.n_mel()];
    for z in 0..zones {
        for t in 0..frames {
            for (m, c) in mag.iter_mut().zip(spec.frame(z, t)) {
                *m = c.norm();
            }
            fb.project(&mag, &mut row);
            for (m, v) in row.iter().enumerate() {
                out.set(m, t, z, *v);
            }
        }
    }
    Ok(out)
}

/// Column-normalized transpose of a filterbank, `F × N_mel`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelInverse<T> {
    bins: usize,
    n_mel: usize,
    /// Nonzero `(m, weight)` pairs for each linear bin.
    entries: Vec<Vec<(usize, T)>>,
}

impl<T: Real> MelInverse<T> {
    pub fn bins(&self) -> usize {
        self.bins
    }
    pub fn n_mel(&self) -> usize {
        self.n_mel
    }

    pub fn weight(&self, f: usize, m: usize) -> T {
        self.entries[f]
            .iter()
            .find(|(mm, _)| *mm == m)
            .map_or(T::zero(), |(_, w)| *w)
    }

    pub fn entries(&self, f: usize) -> &[(usize, T)] {
        &self.entries[f]
    }

    /// Dense `F × N_mel` copy, row-major.
    pub fn to_dense(&self) -> Vec<T> {
        let mut d = vec![T::zero(); self.bins * self.n_mel];
        for (f, row) in self.entries.iter().enumerate() {
            for (m, w) in row {
                d[f * self.n_mel + m] = *w;
            }
        }
        d
    }

    /// `out[f] = Σ_m inv[f, m] · mel[m]`
    pub fn expand(&self, mel: &[T], out: &mut [T]) {
        for (o, row) in out.iter_mut().zip(&self.entries) {
            *o = row.iter().map(|(m, w)| *w * mel[*m]).sum();
        }
    }

    /// Transpose of [`expand`](Self::expand): `out[m] += Σ_f inv[f, m] · lin[f]`.
    pub fn expand_transpose_acc(&self, lin: &[T], out: &mut [T]) {
        for (l, row) in lin.iter().zip(&self.entries) {
            for (m, w) in row {
                out[*m] += *w * *l;
            }
        }
    }
}

/// `inv[f, m] = fb[m, f] / max(Σ_f' fb[m, f'], ε)`
pub fn mel_inverse<T: Real>(fb: &MelFilterbank<T>) -> MelInverse<T> {
    let eps = T::cst(MEL_INVERSE_EPS);
    let mut entries = vec![Vec::new(); fb.bins()];
    for m in 0..fb.n_mel() {
        let area: T = fb.row(m).iter().copied().sum();
        let norm = area.max(eps);
        let (a, b) = fb.support(m);
        for (f, entry) in entries.iter_mut().enumerate().take(b).skip(a) {
            let w = fb.weight(m, f);
            if w > T::zero() {
                entry.push((m, w / norm));
            }
        }
    }
    MelInverse {
        bins: fb.bins(),
        n_mel: fb.n_mel(),
        entries,
    }
}
