//! Grouped 1-D cross-correlation along either the frequency or the time axis
//! of a [`Tensor3`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{Grads, Init, ParamId, ParamStore, Params};
use crate::scalar::{matmul_tile, Real, TILE};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvAxis {
    /// Along the band axis, independently per frame.
    Frequency,
    /// Along the frame axis, independently per band.
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// `(k-1)/2` zeros on both sides.
    Same,
    /// `k-1` zeros on the left only.
    Causal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub groups: usize,
    pub axis: ConvAxis,
    pub padding: Padding,
    pub bias: bool,
}

impl ConvSpec {
    /// Plain convolution over the frequency axis with same padding and bias.
    pub fn frequency(in_ch: usize, out_ch: usize, kernel: usize, groups: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            groups,
            axis: ConvAxis::Frequency,
            padding: Padding::Same,
            bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_ch == 0 || self.out_ch == 0 || self.kernel == 0 || self.groups == 0 {
            return Err(Error::Config(format!("conv dimensions must be positive: {self:?}")));
        }
        if self.in_ch % self.groups != 0 || self.out_ch % self.groups != 0 {
            return Err(Error::Config(format!(
                "conv channels {}→{} not divisible by {} groups",
                self.in_ch, self.out_ch, self.groups
            )));
        }
        if self.padding == Padding::Same && self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "same padding needs an odd kernel, got {}",
                self.kernel
            )));
        }
        Ok(())
    }

    pub fn in_per_group(&self) -> usize {
        self.in_ch / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_ch / self.groups
    }

    pub fn pad_left(&self) -> usize {
        match self.padding {
            Padding::Same => (self.kernel - 1) / 2,
            Padding::Causal => self.kernel - 1,
        }
    }

    /// `positions × out_ch × (in_ch / groups) × kernel` for an input with
    /// `bands × frames` positions.
    pub fn macs(&self, bands: usize, frames: usize) -> u64 {
        (bands * frames) as u64 * (self.out_ch * self.in_per_group() * self.kernel) as u64
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_per_group() * self.kernel + if self.bias { self.out_ch } else { 0 }
    }
}

/// Strides describing how convolution lines map onto tensor storage.
struct Lines {
    count: usize,
    len: usize,
    line_in: usize,
    pos_in: usize,
    line_out: usize,
    pos_out: usize,
}

impl Lines {
    fn new(axis: ConvAxis, bands: usize, frames: usize, cin: usize, cout: usize) -> Self {
        match axis {
            ConvAxis::Frequency => Self {
                count: frames,
                len: bands,
                line_in: bands * cin,
                pos_in: cin,
                line_out: bands * cout,
                pos_out: cout,
            },
            ConvAxis::Time => Self {
                count: bands,
                len: frames,
                line_in: cin,
                pos_in: bands * cin,
                line_out: cout,
                pos_out: bands * cout,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    spec: ConvSpec,
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Conv1d {
    /// Weight `[out, in/groups, kernel]` (uniform init), bias `[out]` (zeros).
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        let fan_in = spec.in_per_group() * spec.kernel;
        let weight = store.register(
            format!("{name}.weight"),
            &[spec.out_ch, spec.in_per_group(), spec.kernel],
            Init::Uniform { fan_in },
        )?;
        let bias = if spec.bias {
            Some(store.register(format!("{name}.bias"), &[spec.out_ch], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { spec, weight, bias })
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn weight_id(&self) -> ParamId {
        self.weight
    }

    pub fn bias_id(&self) -> Option<ParamId> {
        self.bias
    }

    fn check_input<T: Real>(&self, x: &Tensor3<T>) -> Result<()> {
        if x.channels() != self.spec.in_ch {
            return Err(Error::shape(format!(
                "conv expects {} input features, got {}",
                self.spec.in_ch,
                x.channels()
            )));
        }
        Ok(())
    }

    /// Weights rearranged to `[k][out][in/groups]` so the inner loop is contiguous.
    fn kernel_major<T: Real>(&self, w: &[T]) -> Vec<T> {
        let s = &self.spec;
        let (ipg, k) = (s.in_per_group(), s.kernel);
        let mut out = vec![T::zero(); w.len()];
        for o in 0..s.out_ch {
            for i in 0..ipg {
                for j in 0..k {
                    out[(j * s.out_ch + o) * ipg + i] = w[(o * ipg + i) * k + j];
                }
            }
        }
        out
    }

    /// Per line, group and tile of positions, inputs are gathered straight
    /// into the transposed `[in/groups · k][TILE]` layout of [`matmul_tile`].
    /// Depthwise convs take a direct path.
    pub fn forward<T: Real>(&self, p: &Params<T>, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.check_input(x)?;
        let s = &self.spec;
        let (bands, frames) = (x.bands(), x.frames());
        let g = Lines::new(s.axis, bands, frames, s.in_ch, s.out_ch);
        let (ipg, opg, k) = (s.in_per_group(), s.out_per_group(), s.kernel);
        let kd = ipg * k;
        let w = p.get(self.weight);
        let bias = self.bias.map(|b| p.get(b));
        let pad = s.pad_left() as isize;
        let xs = x.as_slice();
        let mut y = Tensor3::zeros(s.out_ch, bands, frames);
        let ys = y.as_mut_slice();
        if ipg == 1 && opg == 1 {
            self.depthwise(w, bias, xs, ys, &g);
            return Ok(y);
        }
        let mut xt = vec![T::zero(); kd * TILE];
        let mut out = vec![T::zero(); TILE * opg];
        for l in 0..g.count {
            for grp in 0..s.groups {
                let wg = &w[grp * opg * kd..(grp + 1) * opg * kd];
                for p0 in (0..g.len).step_by(TILE) {
                    let n = TILE.min(g.len - p0);
                    for i in 0..ipg {
                        for j in 0..k {
                            let row = &mut xt[(i * k + j) * TILE..(i * k + j + 1) * TILE];
                            for (c, v) in row.iter_mut().enumerate() {
                                let q = (p0 + c) as isize + j as isize - pad;
                                *v = if c < n && q >= 0 && q < g.len as isize {
                                    xs[l * g.line_in + q as usize * g.pos_in + grp * ipg + i]
                                } else {
                                    T::zero()
                                };
                            }
                        }
                    }
                    matmul_tile(wg, opg, kd, &xt, n, &mut out);
                    for (c, o) in out.chunks_exact(opg).take(n).enumerate() {
                        let ob = l * g.line_out + (p0 + c) * g.pos_out + grp * opg;
                        let dst = &mut ys[ob..ob + opg];
                        match bias {
                            Some(b) => {
                                for ((d, v), bv) in dst.iter_mut().zip(o).zip(&b[grp * opg..(grp + 1) * opg]) {
                                    *d = *v + *bv;
                                }
                            }
                            None => dst.copy_from_slice(o),
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    /// One input and one output channel per group; vectorized over channels.
    fn depthwise<T: Real>(&self, w: &[T], bias: Option<&[T]>, xs: &[T], ys: &mut [T], g: &Lines) {
        let (ch, k) = (self.spec.in_ch, self.spec.kernel);
        let pad = self.spec.pad_left() as isize;
        let mut wt = vec![T::zero(); k * ch];
        for c in 0..ch {
            for j in 0..k {
                wt[j * ch + c] = w[c * k + j];
            }
        }
        let mut acc = vec![T::zero(); ch];
        for l in 0..g.count {
            for pos in 0..g.len {
                acc.iter_mut().for_each(|v| *v = T::zero());
                for j in 0..k {
                    let q = pos as isize + j as isize - pad;
                    if q < 0 || q >= g.len as isize {
                        continue;
                    }
                    let ib = l * g.line_in + q as usize * g.pos_in;
                    for ((a, wv), xv) in acc.iter_mut().zip(&wt[j * ch..(j + 1) * ch]).zip(&xs[ib..ib + ch]) {
                        *a = *a + *wv * *xv;
                    }
                }
                let ob = l * g.line_out + pos * g.pos_out;
                let dst = &mut ys[ob..ob + ch];
                match bias {
                    Some(b) => {
                        for ((d, a), bv) in dst.iter_mut().zip(&acc).zip(b) {
                            *d = *a + *bv;
                        }
                    }
                    None => dst.copy_from_slice(&acc),
                }
            }
        }
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to `x`.
    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        grads: &mut Grads<T>,
        x: &Tensor3<T>,
        grad_out: &Tensor3<T>,
    ) -> Result<Tensor3<T>> {
        self.check_input(x)?;
        let s = &self.spec;
        let (bands, frames) = (x.bands(), x.frames());
        if grad_out.dims() != (s.out_ch, bands, frames) {
            return Err(Error::shape(format!(
                "conv grad_out {:?} does not match output {:?}",
                grad_out.dims(),
                (s.out_ch, bands, frames)
            )));
        }
        let g = Lines::new(s.axis, bands, frames, s.in_ch, s.out_ch);
        let (ipg, opg, k) = (s.in_per_group(), s.out_per_group(), s.kernel);
        let w = self.kernel_major(p.get(self.weight));
        let mut gw = vec![T::zero(); w.len()];
        let mut gb = vec![T::zero(); s.out_ch];
        let pad = s.pad_left() as isize;
        let (xs, gys) = (x.as_slice(), grad_out.as_slice());
        let mut gx = Tensor3::zeros(s.in_ch, bands, frames);
        let gxs = gx.as_mut_slice();
        for l in 0..g.count {
            for pos in 0..g.len {
                let ob = l * g.line_out + pos * g.pos_out;
                let gy = &gys[ob..ob + s.out_ch];
                for (b, v) in gb.iter_mut().zip(gy) {
                    *b += *v;
                }
                for j in 0..k {
                    let q = pos as isize + j as isize - pad;
                    if q < 0 || q >= g.len as isize {
                        continue;
                    }
                    let ib = l * g.line_in + q as usize * g.pos_in;
                    let base = j * s.out_ch * ipg;
                    for (o, &go) in gy.iter().enumerate() {
                        if go == T::zero() {
                            continue;
                        }
                        let grp = o / opg;
                        let wo = base + o * ipg;
                        for i in 0..ipg {
                            let xi = ib + grp * ipg + i;
                            gw[wo + i] += go * xs[xi];
                            gxs[xi] += go * w[wo + i];
                        }
                    }
                }
            }
        }
        let gwp = grads.get_mut(self.weight);
        for o in 0..s.out_ch {
            for i in 0..ipg {
                for j in 0..k {
                    gwp[(o * ipg + i) * k + j] += gw[(j * s.out_ch + o) * ipg + i];
                }
            }
        }
        if let Some(b) = self.bias {
            for (a, v) in grads.get_mut(b).iter_mut().zip(&gb) {
                *a += *v;
            }
        }
        Ok(gx)
    }
}
