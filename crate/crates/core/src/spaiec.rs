//! Spatial information extraction and compression.
//!
//! The phase-difference stack is squeezed to Mel resolution (pair-merging
//! convolution over frequency, then a shared `F → N_mel` projection) and fused
//! with the Mel magnitudes through a sigmoid gate computed by a convolution
//! over the Mel axis. All weights are shared across zones and frames.

use serde::{Deserialize, Serialize};

use crate::dsp::{IpdTensor, MelFeature};
use crate::error::{Error, Result};
use crate::nn::{Conv1d, ConvSpec, Grads, Linear, ParamStore, Params};
use crate::scalar::{sigmoid, Real};
use crate::tensor::Tensor3;

/// Squeezed phase-difference feature, same layout as [`MelFeature`].
pub type IpdFeature<T> = MelFeature<T>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    /// `g ⊙ X_mel + (1 - g) ⊙ IPD_feat`
    #[default]
    Convex,
    /// `g ⊙ X_mel`
    MelOnly,
}

impl std::str::FromStr for GateMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convex" => Ok(Self::Convex),
            "mel-only" => Ok(Self::MelOnly),
            other => Err(Error::Config(format!("unknown gate mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Spaiec {
    zones: usize,
    bins: usize,
    n_mel: usize,
    mode: GateMode,
    merge: Conv1d,
    project: Linear,
    gate: Conv1d,
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SpaiecTrace<T> {
    /// Pair-merged IPD, viewed as `[F, 1, T·Z]`.
    merged: Tensor3<T>,
    ipd_feat: IpdFeature<T>,
    /// `[2, N_mel, T·Z]` gate input.
    stack: Tensor3<T>,
    gate: Tensor3<T>,
}

impl Spaiec {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        zones: usize,
        bins: usize,
        n_mel: usize,
        kernel: usize,
        mode: GateMode,
    ) -> Result<Self> {
        if zones < 2 {
            return Err(Error::TooFewChannels(zones));
        }
        Ok(Self {
            zones,
            bins,
            n_mel,
            mode,
            merge: Conv1d::new(store, &format!("{name}.squeeze.merge"), ConvSpec::frequency(zones - 1, 1, kernel, 1))?,
            project: Linear::new(store, &format!("{name}.squeeze.project"), bins, n_mel)?,
            gate: Conv1d::new(store, &format!("{name}.gate"), ConvSpec::frequency(2, 1, kernel, 1))?,
        })
    }

    pub fn mode(&self) -> GateMode {
        self.mode
    }

    pub fn merge(&self) -> &Conv1d {
        &self.merge
    }
    pub fn project(&self) -> &Linear {
        &self.project
    }
    pub fn gate(&self) -> &Conv1d {
        &self.gate
    }

    /// `(name, MACs)` for one frame across all zones.
    pub fn macs_per_frame(&self) -> Vec<(String, u64)> {
        vec![
            ("spaiec.squeeze.merge".into(), self.merge.spec().macs(self.bins, self.zones)),
            ("spaiec.squeeze.project".into(), self.project.macs(self.zones)),
            ("spaiec.gate".into(), self.gate.spec().macs(self.n_mel, self.zones)),
        ]
    }

    fn check_ipd<T: Real>(&self, ipd: &IpdTensor<T>) -> Result<()> {
        if ipd.zones() != self.zones || ipd.bins() != self.bins {
            return Err(Error::shape(format!(
                "IPD shape {:?} does not match {} zones × {} bins",
                ipd.shape(),
                self.zones,
                self.bins
            )));
        }
        Ok(())
    }

    fn squeeze_inner<T: Real>(&self, p: &Params<T>, ipd: &IpdTensor<T>) -> Result<(Tensor3<T>, IpdFeature<T>)> {
        self.check_ipd(ipd)?;
        let z = self.zones;
        let frames = ipd.frames();
        let merged = self.merge.forward(p, ipd.folded())?;
        let merged = merged.reshape(self.bins, 1, frames * z);
        let proj = self.project.forward(p, &merged)?;
        let mut feat = MelFeature::zeros(self.n_mel, frames, z);
        for t in 0..frames {
            for zz in 0..z {
                for (m, v) in proj.position(0, t * z + zz).iter().enumerate() {
                    feat.set(m, t, zz, *v);
                }
            }
        }
        Ok((merged, feat))
    }

    /// `[Z, Z-1, F, T]` → `[N_mel, T, Z]`
    pub fn squeeze<T: Real>(&self, p: &Params<T>, ipd: &IpdTensor<T>) -> Result<IpdFeature<T>> {
        Ok(self.squeeze_inner(p, ipd)?.1)
    }

    fn gate_inner<T: Real>(
        &self,
        p: &Params<T>,
        mel: &MelFeature<T>,
        ipd_feat: &IpdFeature<T>,
    ) -> Result<(Tensor3<T>, Tensor3<T>, MelFeature<T>)> {
        if mel.shape() != ipd_feat.shape() || mel.n_mel() != self.n_mel || mel.zones() != self.zones {
            return Err(Error::shape(format!(
                "gate inputs {:?} and {:?} do not match {} mel × {} zones",
                mel.shape(),
                ipd_feat.shape(),
                self.n_mel,
                self.zones
            )));
        }
        let (z, frames) = (self.zones, mel.frames());
        let mut stack = Tensor3::zeros(2, self.n_mel, frames * z);
        for t in 0..frames {
            for zz in 0..z {
                for m in 0..self.n_mel {
                    stack.set(0, m, t * z + zz, mel.get(m, t, zz));
                    stack.set(1, m, t * z + zz, ipd_feat.get(m, t, zz));
                }
            }
        }
        let gate = self.gate.forward(p, &stack)?.map(sigmoid);
        let mut xs = MelFeature::zeros(self.n_mel, frames, z);
        for t in 0..frames {
            for zz in 0..z {
                for m in 0..self.n_mel {
                    let g = gate.get(0, m, t * z + zz);
                    let (a, b) = (mel.get(m, t, zz), ipd_feat.get(m, t, zz));
                    let v = match self.mode {
                        GateMode::Convex => g * a + (T::one() - g) * b,
                        GateMode::MelOnly => g * a,
                    };
                    xs.set(m, t, zz, v);
                }
            }
        }
        Ok((stack, gate, xs))
    }

    /// Gate per zone and frame, `X_s = g ⊙ X_mel + (1 - g) ⊙ IPD_feat`.
    pub fn gate_fuse<T: Real>(&self, p: &Params<T>, mel: &MelFeature<T>, ipd_feat: &IpdFeature<T>) -> Result<MelFeature<T>> {
        Ok(self.gate_inner(p, mel, ipd_feat)?.2)
    }

    /// The gate values `g` themselves, `[1, N_mel, T·Z]` folded.
    pub fn gate_values<T: Real>(&self, p: &Params<T>, mel: &MelFeature<T>, ipd_feat: &IpdFeature<T>) -> Result<Tensor3<T>> {
        Ok(self.gate_inner(p, mel, ipd_feat)?.1)
    }

    pub fn forward<T: Real>(&self, p: &Params<T>, mel: &MelFeature<T>, ipd: &IpdTensor<T>) -> Result<MelFeature<T>> {
        let feat = self.squeeze(p, ipd)?;
        self.gate_fuse(p, mel, &feat)
    }

    pub fn forward_traced<T: Real>(
        &self,
        p: &Params<T>,
        mel: &MelFeature<T>,
        ipd: &IpdTensor<T>,
    ) -> Result<(MelFeature<T>, SpaiecTrace<T>)> {
        let (merged, ipd_feat) = self.squeeze_inner(p, ipd)?;
        let (stack, gate, xs) = self.gate_inner(p, mel, &ipd_feat)?;
        Ok((
            xs,
            SpaiecTrace {
                merged,
                ipd_feat,
                stack,
                gate,
            },
        ))
    }

    /// Parameter gradients only; the features are fixed functions of the input.
    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        grads: &mut Grads<T>,
        mel: &MelFeature<T>,
        ipd: &IpdTensor<T>,
        trace: &SpaiecTrace<T>,
        grad_xs: &MelFeature<T>,
    ) -> Result<()> {
        let (z, frames) = (self.zones, mel.frames());
        let mut g_logit = Tensor3::zeros(1, self.n_mel, frames * z);
        let mut g_feat = MelFeature::zeros(self.n_mel, frames, z);
        for t in 0..frames {
            for zz in 0..z {
                for m in 0..self.n_mel {
                    let gx = grad_xs.get(m, t, zz);
                    let g = trace.gate.get(0, m, t * z + zz);
                    let (a, b) = (mel.get(m, t, zz), trace.ipd_feat.get(m, t, zz));
                    let (dg, db) = match self.mode {
                        GateMode::Convex => (gx * (a - b), gx * (T::one() - g)),
                        GateMode::MelOnly => (gx * a, T::zero()),
                    };
                    g_logit.set(0, m, t * z + zz, dg * g * (T::one() - g));
                    g_feat.set(m, t, zz, db);
                }
            }
        }
        let g_stack = self.gate.backward(p, grads, &trace.stack, &g_logit)?;
        let mut g_proj = Tensor3::zeros(self.n_mel, 1, frames * z);
        for t in 0..frames {
            for zz in 0..z {
                for m in 0..self.n_mel {
                    let v = g_feat.get(m, t, zz) + g_stack.get(1, m, t * z + zz);
                    g_proj.set(m, 0, t * z + zz, v);
                }
            }
        }
        let g_merged = self.project.backward(p, grads, &trace.merged, &g_proj)?;
        let g_merged = g_merged.reshape(1, self.bins, frames * z);
        self.merge.backward(p, grads, ipd.folded(), &g_merged)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{apply_mel, compute_ipd, mel_filterbank, stft, ComplexSpectrogram, StftConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn build(zones: usize, mode: GateMode) -> (ParamStore<f64>, Spaiec) {
        let mut st = ParamStore::new();
        let s = Spaiec::new(&mut st, "spaiec", zones, 257, 64, 5, mode).unwrap();
        st.initialize(7);
        (st, s)
    }

    fn random_spec(zones: usize, frames: usize, seed: u64) -> ComplexSpectrogram<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 512 + 256 * (frames - 1);
        let wave: Vec<Vec<f64>> = (0..zones).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        stft(&wave, &StftConfig::default()).unwrap()
    }

    #[test]
    fn zero_ipd_squeezes_to_zero() {
        let (st, s) = build(6, GateMode::Convex);
        let spec = ComplexSpectrogram::<f64>::zeros(6, 257, 10);
        let ipd = compute_ipd(&spec).unwrap();
        let f = s.squeeze(st.params(), &ipd).unwrap();
        assert_eq!(f.shape(), (64, 10, 6));
        assert!(f.tensor().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gate_averages_inputs() {
        let (mut st, s) = build(3, GateMode::Convex);
        st.zero_prefix("spaiec.gate");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = MelFeature(Tensor3::from_fn(3, 64, 4, |_, _, _| rng.random_range(0.0..2.0)));
        let b = MelFeature(Tensor3::from_fn(3, 64, 4, |_, _, _| rng.random_range(-1.0..1.0)));
        let x = s.gate_fuse(st.params(), &a, &b).unwrap();
        for (i, v) in x.tensor().as_slice().iter().enumerate() {
            let expect = 0.5 * (a.tensor().as_slice()[i] + b.tensor().as_slice()[i]);
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_inputs_pass_through_and_output_stays_in_envelope() {
        let (st, s) = build(4, GateMode::Convex);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = MelFeature(Tensor3::from_fn(4, 64, 3, |_, _, _| rng.random_range(0.0..3.0)));
        let x = s.gate_fuse(st.params(), &a, &a).unwrap();
        assert!(x.tensor().max_abs_diff(a.tensor()) < 1e-14);
        let b = MelFeature(Tensor3::from_fn(4, 64, 3, |_, _, _| rng.random_range(-3.0..3.0)));
        let x = s.gate_fuse(st.params(), &a, &b).unwrap();
        let g = s.gate_values(st.params(), &a, &b).unwrap();
        assert!(g.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
        for i in 0..x.tensor().as_slice().len() {
            let (lo, hi) = {
                let (p, q) = (a.tensor().as_slice()[i], b.tensor().as_slice()[i]);
                (p.min(q), p.max(q))
            };
            let v = x.tensor().as_slice()[i];
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    fn permute_zones(ipd: &IpdTensor<f64>, perm: &[usize]) -> IpdTensor<f64> {
        let z = ipd.zones();
        let src = ipd.folded();
        let mut out = Tensor3::zeros(src.channels(), src.bands(), src.frames());
        for t in 0..ipd.frames() {
            for (dst, &from) in perm.iter().enumerate() {
                for f in 0..ipd.bins() {
                    out.position_mut(f, t * z + dst).copy_from_slice(src.position(f, t * z + from));
                }
            }
        }
        IpdTensor::from_folded(z, out).unwrap()
    }

    #[test]
    fn zone_permutation_is_equivariant() {
        let (st, s) = build(4, GateMode::Convex);
        let fb = mel_filterbank(257, 64, 16_000).unwrap();
        let spec = random_spec(4, 3, 5);
        let perm = [2usize, 0, 3, 1];
        let mel = apply_mel(&spec, &fb).unwrap();
        let ipd = compute_ipd(&spec).unwrap();
        let mut mel_p = MelFeature::zeros(64, spec.frames(), 4);
        for (dst, &src) in perm.iter().enumerate() {
            for t in 0..spec.frames() {
                for m in 0..64 {
                    mel_p.set(m, t, dst, mel.get(m, t, src));
                }
            }
        }
        let x = s.forward(st.params(), &mel, &ipd).unwrap();
        let xp = s.forward(st.params(), &mel_p, &permute_zones(&ipd, &perm)).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            for t in 0..spec.frames() {
                for m in 0..64 {
                    assert_eq!(xp.get(m, t, dst), x.get(m, t, src));
                }
            }
        }
    }

    #[test]
    fn swapping_two_channels_swaps_outputs() {
        let (st, s) = build(2, GateMode::Convex);
        let fb = mel_filterbank(257, 64, 16_000).unwrap();
        let spec = random_spec(2, 3, 6);
        let mut swapped = ComplexSpectrogram::zeros(2, 257, spec.frames());
        for t in 0..spec.frames() {
            swapped.frame_mut(0, t).copy_from_slice(spec.frame(1, t));
            swapped.frame_mut(1, t).copy_from_slice(spec.frame(0, t));
        }
        let run = |sp: &ComplexSpectrogram<f64>| {
            s.forward(st.params(), &apply_mel(sp, &fb).unwrap(), &compute_ipd(sp).unwrap())
                .unwrap()
        };
        let (x, xs) = (run(&spec), run(&swapped));
        for t in 0..spec.frames() {
            for m in 0..64 {
                assert!((xs.get(m, t, 0) - x.get(m, t, 1)).abs() < 1e-12);
                assert!((xs.get(m, t, 1) - x.get(m, t, 0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn frame_local() {
        let (st, s) = build(3, GateMode::MelOnly);
        let fb = mel_filterbank(257, 64, 16_000).unwrap();
        let spec = random_spec(3, 6, 8);
        let mel = apply_mel(&spec, &fb).unwrap();
        let ipd = compute_ipd(&spec).unwrap();
        let full = s.forward(st.params(), &mel, &ipd).unwrap();
        let part = spec.slice_frames(2, 3);
        let one = s
            .forward(st.params(), &apply_mel(&part, &fb).unwrap(), &compute_ipd(&part).unwrap())
            .unwrap();
        assert_eq!(one.tensor(), &full.tensor().slice_frames(2, 3));
    }
}
