//! Full separator: SpaIEC front-end, encoder conv, CNP stack, linear decoder,
//! and Mel-to-linear reconstruction with the input phase.

mod stream;
mod weights;

pub use stream::StreamState;
pub use weights::{infer_config, load_weights, read_weights, save_weights, write_weights, WeightTensor, MAGIC, VERSION};

use serde::{Deserialize, Serialize};

use crate::cnp::{BlockTrace, CnpConfig, CnpStack, CnpState};
use crate::dsp::{apply_mel, compute_ipd, mel_filterbank, mel_inverse, ComplexSpectrogram, IpdTensor, MelFeature, MelFilterbank, MelInverse, Stft, StftConfig};
use crate::error::{Error, Result};
use crate::nn::{Conv1d, ConvSpec, Grads, Linear, ParamStore, Params};
use crate::scalar::Real;
use crate::spaiec::{GateMode, Spaiec, SpaiecTrace};
use crate::tensor::Tensor3;
use rustfft::num_complex::Complex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub zones: usize,
    pub n_mel: usize,
    /// Feature width `H`.
    pub hidden: usize,
    /// GRU state width.
    pub hidden_units: usize,
    /// Number of CNP blocks `M`.
    pub blocks: usize,
    /// Kernel of every convolution.
    pub kernel: usize,
    /// Groups of the crossband grouped conv.
    pub groups: usize,
    pub gate_mode: GateMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            zones: 6,
            n_mel: 64,
            hidden: 72,
            hidden_units: 144,
            blocks: 6,
            kernel: 5,
            groups: 8,
            gate_mode: GateMode::Convex,
        }
    }
}

impl ModelConfig {
    /// Smallest model used for end-to-end gradient checks.
    pub fn tiny() -> Self {
        Self {
            zones: 2,
            n_mel: 8,
            hidden: 16,
            hidden_units: 32,
            blocks: 1,
            ..Self::default()
        }
    }

    /// Six-zone model small enough to overfit on a desk.
    pub fn desk() -> Self {
        Self {
            hidden: 24,
            hidden_units: 48,
            blocks: 2,
            ..Self::default()
        }
    }

    pub fn cnp(&self) -> CnpConfig {
        CnpConfig {
            hidden: self.hidden,
            hidden_units: self.hidden_units,
            blocks: self.blocks,
            n_mel: self.n_mel,
            kernel: self.kernel,
            groups: self.groups,
        }
    }

    pub fn validate(&self, stft: &StftConfig) -> Result<()> {
        if self.zones < 2 {
            return Err(Error::Config(format!("need at least 2 zones, got {}", self.zones)));
        }
        if self.n_mel == 0 || self.n_mel >= stft.freq_bins() {
            return Err(Error::Config(format!(
                "n_mel {} must be in 1..{}",
                self.n_mel,
                stft.freq_bins()
            )));
        }
        self.cnp().validate()
    }
}

/// DSP features of one mixture. They do not depend on parameters.
#[derive(Debug, Clone)]
pub struct Features<T> {
    pub spec: ComplexSpectrogram<T>,
    pub mel: MelFeature<T>,
    pub ipd: IpdTensor<T>,
}

#[derive(Debug, Clone)]
pub struct ModelTrace<T> {
    xs: Tensor3<T>,
    spaiec: SpaiecTrace<T>,
    cnp: Vec<BlockTrace<T>>,
    cnp_out: Tensor3<T>,
}

#[derive(Debug, Clone)]
pub struct LsZoneModel<T: Real> {
    config: ModelConfig,
    stft_config: StftConfig,
    store: ParamStore<T>,
    spaiec: Spaiec,
    encoder: Conv1d,
    cnp: CnpStack,
    decoder: Linear,
    filterbank: MelFilterbank<T>,
    inverse: MelInverse<T>,
    stft: Stft<T>,
}

/// Builds and deterministically initializes a model.
pub fn build_model<T: Real>(config: &ModelConfig, stft: &StftConfig, seed: u64) -> Result<LsZoneModel<T>> {
    let mut model = LsZoneModel::uninitialized(config, stft)?;
    model.store.initialize(seed);
    Ok(model)
}

impl<T: Real> LsZoneModel<T> {
    /// Registers every layer with all parameters left at zero.
    pub fn uninitialized(config: &ModelConfig, stft: &StftConfig) -> Result<Self> {
        stft.validate()?;
        config.validate(stft)?;
        let bins = stft.freq_bins();
        let mut store = ParamStore::new();
        let spaiec = Spaiec::new(&mut store, "spaiec", config.zones, bins, config.n_mel, config.kernel, config.gate_mode)?;
        let encoder = Conv1d::new(
            &mut store,
            "encoder",
            ConvSpec::frequency(config.zones, config.hidden, config.kernel, 1),
        )?;
        let cnp = CnpStack::new(&mut store, "cnp", &config.cnp())?;
        let decoder = Linear::new(&mut store, "decoder", config.hidden, config.zones)?;
        let filterbank = mel_filterbank(bins, config.n_mel, stft.sample_rate)?;
        let inverse = mel_inverse(&filterbank);
        Ok(Self {
            config: config.clone(),
            stft_config: *stft,
            store,
            spaiec,
            encoder,
            cnp,
            decoder,
            filterbank,
            inverse,
            stft: Stft::new(*stft)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }
    pub fn stft_config(&self) -> &StftConfig {
        &self.stft_config
    }
    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }
    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }
    pub fn params(&self) -> &Params<T> {
        self.store.params()
    }
    pub fn param_count(&self) -> usize {
        self.store.count()
    }
    pub fn spaiec(&self) -> &Spaiec {
        &self.spaiec
    }
    pub fn encoder(&self) -> &Conv1d {
        &self.encoder
    }
    pub fn cnp(&self) -> &CnpStack {
        &self.cnp
    }
    pub fn decoder(&self) -> &Linear {
        &self.decoder
    }
    pub fn filterbank(&self) -> &MelFilterbank<T> {
        &self.filterbank
    }
    pub fn inverse(&self) -> &MelInverse<T> {
        &self.inverse
    }
    pub fn stft(&self) -> &Stft<T> {
        &self.stft
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Real>(&self) -> Result<LsZoneModel<U>> {
        let mut m = LsZoneModel::uninitialized(&self.config, &self.stft_config)?;
        m.store = self.store.cast();
        Ok(m)
    }

    pub fn new_state(&self) -> CnpState<T> {
        self.cnp.new_state()
    }

    pub fn features(&self, spec: ComplexSpectrogram<T>) -> Result<Features<T>> {
        if spec.channels() != self.config.zones {
            return Err(Error::shape(format!(
                "model expects {} channels, got {}",
                self.config.zones,
                spec.channels()
            )));
        }
        if spec.bins() != self.stft_config.freq_bins() {
            return Err(Error::shape(format!("spectrogram has {} bins", spec.bins())));
        }
        let mel = apply_mel(&spec, &self.filterbank)?;
        let ipd = compute_ipd(&spec)?;
        Ok(Features { spec, mel, ipd })
    }

    /// Features to `X̂_mel`, advancing `state` by the number of frames.
    pub fn network(&self, p: &Params<T>, f: &Features<T>, state: &mut CnpState<T>) -> Result<MelFeature<T>> {
        let xs = self.spaiec.forward(p, &f.mel, &f.ipd)?;
        let h = self.encoder.forward(p, xs.tensor())?;
        let h = self.cnp.forward(p, h, state)?;
        Ok(MelFeature(self.decoder.forward(p, &h)?))
    }

    /// `X̂_mel` from the mixture spectrogram, starting from zero state.
    pub fn forward_offline(&self, spec: &ComplexSpectrogram<T>) -> Result<MelFeature<T>> {
        let f = self.features(spec.clone())?;
        self.network(self.params(), &f, &mut self.new_state())
    }

    pub fn forward_traced(&self, p: &Params<T>, f: &Features<T>) -> Result<(MelFeature<T>, ModelTrace<T>)> {
        let (xs, spaiec) = self.spaiec.forward_traced(p, &f.mel, &f.ipd)?;
        let xs = xs.into_tensor();
        let h = self.encoder.forward(p, &xs)?;
        let (cnp_out, cnp) = self.cnp.forward_traced(p, h, &mut self.new_state())?;
        let y = self.decoder.forward(p, &cnp_out)?;
        Ok((
            MelFeature(y),
            ModelTrace {
                xs,
                spaiec,
                cnp,
                cnp_out,
            },
        ))
    }

    /// Accumulates parameter gradients given `∂L/∂X̂_mel`.
    pub fn backward(
        &self,
        p: &Params<T>,
        grads: &mut Grads<T>,
        f: &Features<T>,
        trace: &ModelTrace<T>,
        grad_xhat: &MelFeature<T>,
    ) -> Result<()> {
        let g = self.decoder.backward(p, grads, &trace.cnp_out, grad_xhat.tensor())?;
        let g = self.cnp.backward(p, grads, &trace.cnp, g)?;
        let g = self.encoder.backward(p, grads, &trace.xs, &g)?;
        self.spaiec.backward(p, grads, &f.mel, &f.ipd, &trace.spaiec, &MelFeature(g))
    }

    /// Linear-frequency magnitude of one zone and frame: `inv · max(X̂, 0)`.
    fn frame_magnitude(&self, xhat: &MelFeature<T>, z: usize, t: usize, mel: &mut [T], mag: &mut [T]) {
        for (m, v) in mel.iter_mut().enumerate() {
            *v = xhat.get(m, t, z).max(T::zero());
        }
        self.inverse.expand(mel, mag);
    }

    /// Zone `z` takes the phase of input channel `z`.
    pub fn reconstruct_spec(&self, xhat: &MelFeature<T>, phase_src: &ComplexSpectrogram<T>) -> Result<ComplexSpectrogram<T>> {
        let (n_mel, frames, zones) = xhat.shape();
        if n_mel != self.config.n_mel || zones != phase_src.channels() || frames != phase_src.frames() {
            return Err(Error::shape(format!(
                "estimate {:?} does not match spectrogram with {} channels × {} frames",
                xhat.shape(),
                phase_src.channels(),
                phase_src.frames()
            )));
        }
        let bins = self.stft_config.freq_bins();
        let mut out = ComplexSpectrogram::zeros(zones, bins, frames);
        let mut mel = vec![T::zero(); n_mel];
        let mut mag = vec![T::zero(); bins];
        for z in 0..zones {
            for t in 0..frames {
                self.frame_magnitude(xhat, z, t, &mut mel, &mut mag);
                for (f, m) in mag.iter().enumerate() {
                    let (c, s) = phase_src.phasor(z, f, t);
                    out.set(z, f, t, Complex::new(*m * c, *m * s));
                }
            }
        }
        Ok(out)
    }

    /// Chain rule through [`reconstruct_spec`](Self::reconstruct_spec).
    pub fn reconstruct_spec_backward(
        &self,
        xhat: &MelFeature<T>,
        phase_src: &ComplexSpectrogram<T>,
        grad_spec: &ComplexSpectrogram<T>,
    ) -> MelFeature<T> {
        let (n_mel, frames, zones) = xhat.shape();
        let bins = self.stft_config.freq_bins();
        let mut g = MelFeature::zeros(n_mel, frames, zones);
        let mut gmag = vec![T::zero(); bins];
        let mut gmel = vec![T::zero(); n_mel];
        for z in 0..zones {
            for t in 0..frames {
                for (f, gm) in gmag.iter_mut().enumerate() {
                    let (c, s) = phase_src.phasor(z, f, t);
                    let gs = grad_spec.get(z, f, t);
                    *gm = gs.re * c + gs.im * s;
                }
                gmel.iter_mut().for_each(|v| *v = T::zero());
                self.inverse.expand_transpose_acc(&gmag, &mut gmel);
                for (m, v) in gmel.iter().enumerate() {
                    if xhat.get(m, t, z) > T::zero() {
                        g.set(m, t, z, *v);
                    }
                }
            }
        }
        g
    }

    /// Per-zone waveforms of `(T - 1)·hop + win_len` samples.
    pub fn reconstruct(&self, xhat: &MelFeature<T>, phase_src: &ComplexSpectrogram<T>) -> Result<Vec<Vec<T>>> {
        self.stft.synthesize(&self.reconstruct_spec(xhat, phase_src)?)
    }

    /// Offline separation; output has as many samples as the input.
    pub fn separate(&self, wave: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        if wave.len() != self.config.zones {
            return Err(Error::shape(format!(
                "model expects {} channels, got {}",
                self.config.zones,
                wave.len()
            )));
        }
        let n = wave[0].len();
        // pad the last partial hop so framing matches the streaming path
        let hop = self.stft_config.hop;
        let padded: Vec<Vec<T>>;
        let wave = if n % hop == 0 {
            wave
        } else {
            let len = n.div_ceil(hop) * hop;
            padded = wave.iter().map(|c| c.iter().copied().chain(std::iter::repeat(T::zero())).take(len).collect()).collect();
            &padded
        };
        let spec = self.stft.analyze(wave)?;
        let xhat = self.forward_offline(&spec)?;
        let mut out = self.reconstruct(&xhat, &spec)?;
        for ch in &mut out {
            ch.resize(n, T::zero());
        }
        Ok(out)
    }
}
