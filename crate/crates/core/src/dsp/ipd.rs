//! Inter-channel phase differences.

use crate::dsp::stft::ComplexSpectrogram;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor3;

/// Wrap an angle into `(-π, π]`.
pub fn wrap_phase<T: Real>(x: T) -> T {
    let pi = T::PI();
    let two_pi = pi + pi;
    let mut y = x - two_pi * ((x + pi) / two_pi).floor();
    // y is now in [-π, π) up to rounding
    if y <= -pi {
        y += two_pi;
    }
    if y > pi {
        y -= two_pi;
    }
    y
}

/// Stacked phase differences, logically `[z, k', f, t]` with shape
/// `[Z, Z-1, F, T]`.
///
/// For zone `z`, pair slot `k'` refers to channel `k = k'` if `k' < z` and
/// `k = k' + 1` otherwise (ascending, skipping `z`). Stored as a [`Tensor3`]
/// with the pair slots as features, frequency as bands, and `(t, z)` folded
/// into the frame axis as `t * Z + z`, so each zone's slice is directly the
/// input of the shared squeezer convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct IpdTensor<T> {
    zones: usize,
    inner: Tensor3<T>,
}

impl<T: Real> IpdTensor<T> {
    pub fn zones(&self) -> usize {
        self.zones
    }
    pub fn bins(&self) -> usize {
        self.inner.bands()
    }
    pub fn frames(&self) -> usize {
        self.inner.frames() / self.zones
    }
    /// `(Z, Z-1, F, T)`
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.zones, self.zones - 1, self.bins(), self.frames())
    }

    #[inline]
    pub fn get(&self, z: usize, pair: usize, f: usize, t: usize) -> T {
        self.inner.get(pair, f, t * self.zones + z)
    }

    /// Channel index referenced by pair slot `pair` of zone `z`.
    pub fn partner(z: usize, pair: usize) -> usize {
        if pair < z {
            pair
        } else {
            pair + 1
        }
    }

    /// Tensor view `[Z-1, F, T·Z]` consumed by the squeezer.
    pub fn folded(&self) -> &Tensor3<T> {
        &self.inner
    }

    pub fn from_folded(zones: usize, inner: Tensor3<T>) -> Result<Self> {
        if zones < 2 || inner.channels() != zones - 1 || inner.frames() % zones != 0 {
            return Err(Error::shape(format!(
                "folded IPD tensor {:?} does not match {zones} zones",
                inner.dims()
            )));
        }
        Ok(Self { zones, inner })
    }
}

/// `IPD[z, k] = wrap(phase[z] - phase[k])` for every ordered pair `k ≠ z`.
pub fn compute_ipd<T: Real>(spec: &ComplexSpectrogram<T>) -> Result<IpdTensor<T>> {
    let zones = spec.channels();
    if zones < 2 {
        return Err(Error::TooFewChannels(zones));
    }
    let (bins, frames) = (spec.bins(), spec.frames());
    let mut inner = Tensor3::zeros(zones - 1, bins, frames * zones);
    let mut phase = vec![T::zero(); zones];
    for t in 0..frames {
        for f in 0..bins {
            for (z, p) in phase.iter_mut().enumerate() {
                *p = spec.phase(z, f, t);
            }
            for z in 0..zones {
                let pos = inner.position_mut(f, t * zones + z);
                for (pair, slot) in pos.iter_mut().enumerate() {
                    let k = IpdTensor::<T>::partner(z, pair);
                    *slot = wrap_phase(phase[z] - phase[k]);
                }
            }
        }
    }
    Ok(IpdTensor { zones, inner })
}
