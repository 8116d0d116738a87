//! Dense `[feature, band, frame]` tensor used for every hidden representation.

use crate::scalar::Real;

/// Logical index `[c, b, t]` (feature, band, frame).
///
/// Storage is frame-major with the feature axis innermost, so the feature
/// vector at one `(band, frame)` position is contiguous and a whole frame is
/// contiguous. Streaming appends frames without reshuffling.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    channels: usize,
    bands: usize,
    frames: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn zeros(channels: usize, bands: usize, frames: usize) -> Self {
        Self {
            channels,
            bands,
            frames,
            data: vec![T::zero(); channels * bands * frames],
        }
    }

    pub fn from_fn(
        channels: usize,
        bands: usize,
        frames: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut out = Self::zeros(channels, bands, frames);
        for t in 0..frames {
            for b in 0..bands {
                for c in 0..channels {
                    out.data[(t * bands + b) * channels + c] = f(c, b, t);
                }
            }
        }
        out
    }

    /// Wrap storage laid out as `[frame][band][feature]`.
    pub fn from_vec(channels: usize, bands: usize, frames: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), channels * bands * frames, "tensor storage size");
        Self {
            channels,
            bands,
            frames,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    #[inline]
    pub fn bands(&self) -> usize {
        self.bands
    }
    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.bands, self.frames)
    }

    #[inline]
    pub fn index(&self, c: usize, b: usize, t: usize) -> usize {
        (t * self.bands + b) * self.channels + c
    }

    #[inline]
    pub fn get(&self, c: usize, b: usize, t: usize) -> T {
        self.data[self.index(c, b, t)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, b: usize, t: usize, v: T) {
        let i = self.index(c, b, t);
        self.data[i] = v;
    }

    /// Feature vector at `(b, t)`.
    #[inline]
    pub fn position(&self, b: usize, t: usize) -> &[T] {
        let o = (t * self.bands + b) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn position_mut(&mut self, b: usize, t: usize) -> &mut [T] {
        let o = (t * self.bands + b) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    pub fn frame(&self, t: usize) -> &[T] {
        let n = self.bands * self.channels;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [T] {
        let n = self.bands * self.channels;
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Reinterpret the same storage with different extents.
    pub fn reshape(self, channels: usize, bands: usize, frames: usize) -> Self {
        assert_eq!(channels * bands * frames, self.data.len(), "reshape size");
        Self {
            channels,
            bands,
            frames,
            data: self.data,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            channels: self.channels,
            bands: self.bands,
            frames: self.frames,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.dims(), other.dims(), "add_assign dims");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    /// Frames `start..end` as a new tensor.
    pub fn slice_frames(&self, start: usize, end: usize) -> Self {
        let n = self.bands * self.channels;
        Self {
            channels: self.channels,
            bands: self.bands,
            frames: end - start,
            data: self.data[start * n..end * n].to_vec(),
        }
    }

    /// Append all frames of `other`.
    pub fn append_frames(&mut self, other: &Self) {
        assert_eq!(
            (self.channels, self.bands),
            (other.channels, other.bands),
            "append_frames dims"
        );
        self.data.extend_from_slice(&other.data);
        self.frames += other.frames;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn cast<U: Real>(&self) -> Tensor3<U> {
        Tensor3 {
            channels: self.channels,
            bands: self.bands,
            frames: self.frames,
            data: self.data.iter().map(|x| U::cst(x.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_is_contiguous_feature_vector() {
        let t = Tensor3::<f64>::from_fn(3, 4, 2, |c, b, t| (c + 10 * b + 100 * t) as f64);
        assert_eq!(t.position(2, 1), &[120.0, 121.0, 122.0]);
        assert_eq!(t.get(1, 3, 0), 31.0);
    }

    #[test]
    fn slice_and_append_frames_round_trip() {
        let t = Tensor3::<f32>::from_fn(2, 3, 5, |c, b, t| (c * 7 + b * 3 + t) as f32);
        let mut a = t.slice_frames(0, 2);
        a.append_frames(&t.slice_frames(2, 5));
        assert_eq!(a, t);
    }
}
