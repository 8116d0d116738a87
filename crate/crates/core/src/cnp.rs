//! Conv-GRU blocks: a frame-local crossband branch (convolutions over the Mel
//! axis) alternating with a narrowband branch (one GRU per Mel bin with shared
//! weights). Both branches are residual.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::act::{silu_backward, silu_tensor};
use crate::nn::gru::GruTrace;
use crate::nn::{Conv1d, ConvSpec, Grads, Gru, LayerNorm, Linear, ParamStore, Params};
use crate::scalar::Real;
use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnpConfig {
    /// Feature width `H`.
    pub hidden: usize,
    /// GRU state width.
    pub hidden_units: usize,
    pub blocks: usize,
    pub n_mel: usize,
    pub kernel: usize,
    pub groups: usize,
}

impl Default for CnpConfig {
    fn default() -> Self {
        Self {
            hidden: 72,
            hidden_units: 144,
            blocks: 6,
            n_mel: 64,
            kernel: 5,
            groups: 8,
        }
    }
}

impl CnpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.hidden_units == 0 || self.n_mel == 0 || self.kernel == 0 || self.groups == 0 {
            return Err(Error::Config("CNP dimensions must be positive".into()));
        }
        if self.hidden % self.groups != 0 {
            return Err(Error::Config(format!(
                "hidden width {} is not divisible by {} groups",
                self.hidden, self.groups
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("crossband kernel {} must be odd", self.kernel)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ConvCrossband {
    norm: LayerNorm,
    depthwise: Conv1d,
    pointwise: Conv1d,
    grouped: Conv1d,
}

#[derive(Debug, Clone)]
pub struct CrossbandTrace<T> {
    ln: Tensor3<T>,
    a: Tensor3<T>,
    sa: Tensor3<T>,
    b: Tensor3<T>,
    sb: Tensor3<T>,
}

impl ConvCrossband {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cfg: &CnpConfig) -> Result<Self> {
        let h = cfg.hidden;
        Ok(Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), h)?,
            depthwise: Conv1d::new(store, &format!("{name}.fconv"), ConvSpec::frequency(h, h, cfg.kernel, h))?,
            pointwise: Conv1d::new(store, &format!("{name}.conv"), ConvSpec::frequency(h, h, 1, 1))?,
            grouped: Conv1d::new(store, &format!("{name}.gconv"), ConvSpec::frequency(h, h, cfg.kernel, cfg.groups))?,
        })
    }

    /// Per-layer MACs over `n_mel` bands of one frame.
    pub fn layer_macs(&self, n_mel: usize) -> [(&'static str, u64); 3] {
        [
            ("fconv", self.depthwise.spec().macs(n_mel, 1)),
            ("conv", self.pointwise.spec().macs(n_mel, 1)),
            ("gconv", self.grouped.spec().macs(n_mel, 1)),
        ]
    }

    pub fn macs(&self, n_mel: usize, frames: usize) -> u64 {
        [&self.depthwise, &self.pointwise, &self.grouped]
            .iter()
            .map(|c| c.spec().macs(n_mel, frames))
            .sum()
    }

    fn run<T: Real>(&self, p: &Params<T>, x: &Tensor3<T>) -> Result<(Tensor3<T>, CrossbandTrace<T>)> {
        let ln = self.norm.forward(p, x)?;
        let a = self.depthwise.forward(p, &ln)?;
        let sa = silu_tensor(&a);
        let b = self.pointwise.forward(p, &sa)?;
        let sb = silu_tensor(&b);
        let mut y = self.grouped.forward(p, &sb)?;
        y.add_assign(x);
        Ok((y, CrossbandTrace { ln, a, sa, b, sb }))
    }

    pub fn forward<T: Real>(&self, p: &Params<T>, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        Ok(self.run(p, x)?.0)
    }

    pub fn forward_traced<T: Real>(&self, p: &Params<T>, x: &Tensor3<T>) -> Result<(Tensor3<T>, CrossbandTrace<T>)> {
        self.run(p, x)
    }

    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        grads: &mut Grads<T>,
        x: &Tensor3<T>,
        trace: &CrossbandTrace<T>,
        grad_y: &Tensor3<T>,
    ) -> Result<Tensor3<T>> {
        let g = self.grouped.backward(p, grads, &trace.sb, grad_y)?;
        let g = silu_backward(&trace.b, &g);
        let g = self.pointwise.backward(p, grads, &trace.sa, &g)?;
        let g = silu_backward(&trace.a, &g);
        let g = self.depthwise.backward(p, grads, &trace.ln, &g)?;
        let mut gx = self.norm.backward(p, grads, x, &g)?;
        gx.add_assign(grad_y);
        Ok(gx)
    }
}

#[derive(Debug, Clone)]
pub struct GruNarrowband {
    norm: LayerNorm,
    gru: Gru,
    out: Linear,
}

#[derive(Debug, Clone)]
pub struct NarrowbandTrace<T> {
    ln: Tensor3<T>,
    g: Tensor3<T>,
    gru: GruTrace<T>,
}

impl GruNarrowband {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cfg: &CnpConfig) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), cfg.hidden)?,
            gru: Gru::new(store, &format!("{name}.gru"), cfg.hidden, cfg.hidden_units)?,
            out: Linear::new(store, &format!("{name}.linear"), cfg.hidden_units, cfg.hidden)?,
        })
    }

    pub fn gru(&self) -> &Gru {
        &self.gru
    }

    pub fn layer_macs(&self, n_mel: usize) -> [(&'static str, u64); 2] {
        [
            ("gru", n_mel as u64 * self.gru.macs_per_step()),
            ("linear", self.out.macs(n_mel)),
        ]
    }

    pub fn macs(&self, n_mel: usize, frames: usize) -> u64 {
        (n_mel * frames) as u64 * self.gru.macs_per_step() + self.out.macs(n_mel * frames)
    }

    /// `state` is `n_mel × hidden_units`, advanced in place.
    pub fn forward<T: Real>(&self, p: &Params<T>, x: &Tensor3<T>, state: &mut [T]) -> Result<Tensor3<T>> {
        let ln = self.norm.forward(p, x)?;
        let g = self.gru.forward(p, &ln, state)?;
        let mut y = self.out.forward(p, &g)?;
        y.add_assign(x);
        Ok(y)
    }

    pub fn forward_traced<T: Real>(
        &self,
        p: &Params<T>,
        x: &Tensor3<T>,
        state: &mut [T],
    ) -> Result<(Tensor3<T>, NarrowbandTrace<T>)> {
        let ln = self.norm.forward(p, x)?;
        let (g, gru) = self.gru.forward_traced(p, &ln, state)?;
        let mut y = self.out.forward(p, &g)?;
        y.add_assign(x);
        Ok((y, NarrowbandTrace { ln, g, gru }))
    }

    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        grads: &mut Grads<T>,
        x: &Tensor3<T>,
        trace: &NarrowbandTrace<T>,
        grad_y: &Tensor3<T>,
    ) -> Result<Tensor3<T>> {
        let g = self.out.backward(p, grads, &trace.g, grad_y)?;
        let g = self.gru.backward(p, grads, &trace.ln, &trace.g, &trace.gru, &g)?;
        let mut gx = self.norm.backward(p, grads, x, &g)?;
        gx.add_assign(grad_y);
        Ok(gx)
    }
}

#[derive(Debug, Clone)]
pub struct CnpBlock {
    pub crossband: ConvCrossband,
    pub narrowband: GruNarrowband,
}

#[derive(Debug, Clone)]
pub struct BlockTrace<T> {
    x: Tensor3<T>,
    mid: Tensor3<T>,
    cross: CrossbandTrace<T>,
    narrow: NarrowbandTrace<T>,
}

/// GRU hidden states of every block, `n_mel × hidden_units` each.
#[derive(Debug, Clone, PartialEq)]
pub struct CnpState<T> {
    pub blocks: Vec<Vec<T>>,
}

impl<T: Real> CnpState<T> {
    pub fn new(cfg: &CnpConfig) -> Self {
        Self {
            blocks: vec![vec![T::zero(); cfg.n_mel * cfg.hidden_units]; cfg.blocks],
        }
    }

    pub fn reset(&mut self) {
        for b in &mut self.blocks {
            b.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct CnpStack {
    cfg: CnpConfig,
    blocks: Vec<CnpBlock>,
}

impl CnpStack {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cfg: &CnpConfig) -> Result<Self> {
        cfg.validate()?;
        let blocks = (0..cfg.blocks)
            .map(|i| {
                Ok(CnpBlock {
                    crossband: ConvCrossband::new(store, &format!("{name}.{i}.crossband"), cfg)?,
                    narrowband: GruNarrowband::new(store, &format!("{name}.{i}.narrowband"), cfg)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cfg: cfg.clone(), blocks })
    }

    pub fn config(&self) -> &CnpConfig {
        &self.cfg
    }

    pub fn blocks(&self) -> &[CnpBlock] {
        &self.blocks
    }

    pub fn new_state<T: Real>(&self) -> CnpState<T> {
        CnpState::new(&self.cfg)
    }

    /// `(crossband, narrowband)` MACs per frame for each block.
    pub fn macs_per_frame(&self) -> Vec<(u64, u64)> {
        self.blocks
            .iter()
            .map(|b| (b.crossband.macs(self.cfg.n_mel, 1), b.narrowband.macs(self.cfg.n_mel, 1)))
            .collect()
    }

    fn check<T: Real>(&self, h: &Tensor3<T>, state: &CnpState<T>) -> Result<()> {
        if h.channels() != self.cfg.hidden || h.bands() != self.cfg.n_mel {
            return Err(Error::shape(format!(
                "CNP input {:?} expects {} features × {} mel bins",
                h.dims(),
                self.cfg.hidden,
                self.cfg.n_mel
            )));
        }
        if state.blocks.len() != self.blocks.len()
            || state.blocks.iter().any(|s| s.len() != self.cfg.n_mel * self.cfg.hidden_units)
        {
            return Err(Error::shape("CNP state does not match the stack"));
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, p: &Params<T>, h: Tensor3<T>, state: &mut CnpState<T>) -> Result<Tensor3<T>> {
        self.check(&h, state)?;
        let mut h = h;
        for (block, s) in self.blocks.iter().zip(state.blocks.iter_mut()) {
            let mid = block.crossband.forward(p, &h)?;
            h = block.narrowband.forward(p, &mid, s)?;
        }
        Ok(h)
    }

    pub fn forward_traced<T: Real>(
        &self,
        p: &Params<T>,
        h: Tensor3<T>,
        state: &mut CnpState<T>,
    ) -> Result<(Tensor3<T>, Vec<BlockTrace<T>>)> {
        self.check(&h, state)?;
        let mut h = h;
        let mut traces = Vec::with_capacity(self.blocks.len());
        for (block, s) in self.blocks.iter().zip(state.blocks.iter_mut()) {
            let (mid, cross) = block.crossband.forward_traced(p, &h)?;
            let (out, narrow) = block.narrowband.forward_traced(p, &mid, s)?;
            traces.push(BlockTrace { x: h, mid, cross, narrow });
            h = out;
        }
        Ok((h, traces))
    }

    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        grads: &mut Grads<T>,
        traces: &[BlockTrace<T>],
        grad_out: Tensor3<T>,
    ) -> Result<Tensor3<T>> {
        let mut g = grad_out;
        for (block, tr) in self.blocks.iter().zip(traces).rev() {
            g = block.narrowband.backward(p, grads, &tr.mid, &tr.narrow, &g)?;
            g = block.crossband.backward(p, grads, &tr.x, &tr.cross, &g)?;
        }
        Ok(g)
    }
}
