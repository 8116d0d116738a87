//! Block-by-block inference. Each `hop`-sample input block completes one
//! analysis frame; the emitted block lags the input by `win_len - hop`
//! samples and matches offline separation sample for sample.

use rustfft::num_complex::Complex;

use super::LsZoneModel;
use crate::cnp::CnpState;
use crate::dsp::stft::WINDOW_SUM_FLOOR;
use crate::dsp::ComplexSpectrogram;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct StreamState<T> {
    /// Previous input block per channel.
    prev: Vec<Vec<T>>,
    blocks: usize,
    /// Overlap-add accumulator per zone, `win_len` long.
    tail: Vec<Vec<T>>,
    /// Window-square accumulator matching `tail`.
    wsum: Vec<T>,
    cnp: CnpState<T>,
}

impl<T: Real> StreamState<T> {
    pub fn reset(&mut self) {
        for v in self.prev.iter_mut().chain(self.tail.iter_mut()) {
            v.iter_mut().for_each(|x| *x = T::zero());
        }
        self.wsum.iter_mut().for_each(|x| *x = T::zero());
        self.blocks = 0;
        self.cnp.reset();
    }

    /// Input blocks consumed since the last reset.
    pub fn blocks_seen(&self) -> usize {
        self.blocks
    }

    pub fn cnp(&self) -> &CnpState<T> {
        &self.cnp
    }
}

impl<T: Real> LsZoneModel<T> {
    pub fn stream_init(&self) -> StreamState<T> {
        let (z, hop, win) = (self.config.zones, self.stft_config.hop, self.stft_config.win_len);
        StreamState {
            prev: vec![vec![T::zero(); hop]; z],
            blocks: 0,
            tail: vec![vec![T::zero(); win]; z],
            wsum: vec![T::zero(); win],
            cnp: self.new_state(),
        }
    }

    /// Consumes one `hop`-sample block per channel and emits one block per
    /// zone. The first block of a stream is always silent.
    pub fn stream_step(&self, state: &mut StreamState<T>, block: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        let (zones, hop, win) = (self.config.zones, self.stft_config.hop, self.stft_config.win_len);
        if block.len() != zones {
            return Err(Error::shape(format!("model expects {zones} channels, got {}", block.len())));
        }
        if let Some(bad) = block.iter().find(|b| b.len() != hop) {
            return Err(Error::BlockSize { got: bad.len(), hop });
        }
        if block.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let first = state.blocks == 0;
        state.blocks += 1;
        if first {
            for (p, b) in state.prev.iter_mut().zip(block) {
                p.copy_from_slice(b);
            }
            return Ok(vec![vec![T::zero(); hop]; zones]);
        }

        let bins = self.stft_config.freq_bins();
        let mut spec = ComplexSpectrogram::zeros(zones, bins, 1);
        let mut frame = vec![T::zero(); win];
        for z in 0..zones {
            frame[..hop].copy_from_slice(&state.prev[z]);
            frame[hop..].copy_from_slice(&block[z]);
            self.stft.analyze_frame(&frame, spec.frame_mut(z, 0));
            state.prev[z].copy_from_slice(&block[z]);
        }
        let features = self.features(spec)?;
        let xhat = self.network(self.params(), &features, &mut state.cnp)?;
        let est = self.reconstruct_spec(&xhat, &features.spec)?;

        for (i, w) in self.stft.window().iter().enumerate() {
            state.wsum[i] += *w * *w;
        }
        let floor = T::cst(WINDOW_SUM_FLOOR);
        let mut out = Vec::with_capacity(zones);
        let mut synth = vec![T::zero(); win];
        for z in 0..zones {
            let bins_z: &[Complex<T>] = est.frame(z, 0);
            self.stft.synthesize_frame(bins_z, &mut synth);
            let tail = &mut state.tail[z];
            for (acc, v) in tail.iter_mut().zip(&synth) {
                *acc += *v;
            }
            out.push(
                tail[..hop]
                    .iter()
                    .zip(&state.wsum)
                    .map(|(v, s)| if *s > floor { *v / *s } else { T::zero() })
                    .collect(),
            );
            tail.copy_within(hop.., 0);
            tail[win - hop..].iter_mut().for_each(|x| *x = T::zero());
        }
        state.wsum.copy_within(hop.., 0);
        state.wsum[win - hop..].iter_mut().for_each(|x| *x = T::zero());
        Ok(out)
    }

    /// Flushes the last `win_len - hop` samples and resets the state.
    pub fn stream_finish(&self, state: &mut StreamState<T>) -> Vec<Vec<T>> {
        let keep = self.stft_config.win_len - self.stft_config.hop;
        let floor = T::cst(WINDOW_SUM_FLOOR);
        let out = state
            .tail
            .iter()
            .map(|tail| {
                tail[..keep]
                    .iter()
                    .zip(&state.wsum)
                    .map(|(v, s)| if *s > floor { *v / *s } else { T::zero() })
                    .collect()
            })
            .collect();
        state.reset();
        out
    }
}
