//! Scalar abstraction shared by every numeric kernel.
//!
//! Inference runs in `f32`, gradient verification in `f64`; everything in the
//! crate is written once against [`Real`].

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating point scalar usable by the DSP, network and simulator code.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + rustfft::FftNum
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from a double precision literal.
    fn cst(x: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Bytes of one little-endian `f32` encoding of the value.
    fn to_f32_bits(self) -> u32 {
        (self.as_f64() as f32).to_bits()
    }
}

impl Real for f32 {
    #[inline(always)]
    fn cst(x: f64) -> Self {
        x as f32
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn to_f32_bits(self) -> u32 {
        self.to_bits()
    }
}

impl Real for f64 {
    #[inline(always)]
    fn cst(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] = acc[j] + x[j] * y[j];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Sequential dot product; the per-entry reference for [`matmul_positions`].
#[inline]
pub fn dot_seq<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc = acc + *x * *y;
    }
    acc
}

/// Positions processed together by [`matmul_positions`].
pub const TILE: usize = 16;

/// `y[p·rows + j] = Σ_k w[j·k_dim + k] · x[p·k_dim + k]` for every position
/// `p`, summed in order of `k` so each entry equals [`dot_seq`] exactly.
/// Tiles of positions are transposed into `scratch` so the inner loop runs
/// across positions.
pub fn matmul_positions<T: Real>(w: &[T], rows: usize, k_dim: usize, x: &[T], y: &mut [T], scratch: &mut Vec<T>) {
    if k_dim == 0 {
        return;
    }
    let positions = x.len() / k_dim;
    debug_assert_eq!(w.len(), rows * k_dim);
    debug_assert!(y.len() >= positions * rows);
    scratch.clear();
    scratch.resize(k_dim * TILE, T::zero());
    for p0 in (0..positions).step_by(TILE) {
        let n = TILE.min(positions - p0);
        for c in 0..n {
            let xp = &x[(p0 + c) * k_dim..(p0 + c + 1) * k_dim];
            for (k, v) in xp.iter().enumerate() {
                scratch[k * TILE + c] = *v;
            }
        }
        if n < TILE {
            for k in 0..k_dim {
                scratch[k * TILE + n..(k + 1) * TILE].iter_mut().for_each(|v| *v = T::zero());
            }
        }
        matmul_tile(w, rows, k_dim, scratch, n, &mut y[p0 * rows..(p0 + n) * rows]);
    }
}

/// One tile of [`matmul_positions`]: `xt` is `[k_dim][TILE]`, of which the
/// first `n` columns are written to `y` as `[n][rows]`.
#[inline]
pub fn matmul_tile<T: Real>(w: &[T], rows: usize, k_dim: usize, xt: &[T], n: usize, y: &mut [T]) {
    for j in 0..rows {
        let wr = &w[j * k_dim..(j + 1) * k_dim];
        let mut acc = [T::zero(); TILE];
        for (xr, &wk) in xt.chunks_exact(TILE).zip(wr) {
            for c in 0..TILE {
                acc[c] = acc[c] + wk * xr[c];
            }
        }
        for (c, a) in acc.iter().enumerate().take(n) {
            y[c * rows + j] = *a;
        }
    }
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_for_odd_lengths() {
        for n in [0usize, 1, 7, 8, 9, 31, 144] {
            let a: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).cos()).collect();
            let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((dot(&a, &b) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_positions_equals_sequential_dots() {
        for (rows, k_dim, positions) in [(3usize, 5usize, 1usize), (7, 1, 16), (4, 9, 17), (12, 33, 40)] {
            let w: Vec<f32> = (0..rows * k_dim).map(|i| (i as f32 * 0.31).sin()).collect();
            let x: Vec<f32> = (0..positions * k_dim).map(|i| (i as f32 * 0.17).cos()).collect();
            let mut y = vec![f32::NAN; rows * positions];
            matmul_positions(&w, rows, k_dim, &x, &mut y, &mut Vec::new());
            for p in 0..positions {
                for j in 0..rows {
                    let r = dot_seq(&w[j * k_dim..(j + 1) * k_dim], &x[p * k_dim..(p + 1) * k_dim]);
                    assert_eq!(y[p * rows + j].to_bits(), r.to_bits());
                }
            }
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert_eq!(sigmoid(800.0f64), 1.0);
    }
}
