//! Unidirectional GRU with hand-derived backpropagation through time.
//!
//! ```text
//! r  = σ(W_r x + U_r h + b_r)
//! u  = σ(W_u x + U_u h + b_u)
//! n  = tanh(W_n x + r ⊙ (U_n h) + b_n)
//! h' = (1 - u) ⊙ n + u ⊙ h
//! ```

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::params::{Grads, Init, ParamId, ParamStore, Params};
use crate::scalar::{axpy, dot_seq, matmul_positions, sigmoid, Real, TILE};
use crate::tensor::Tensor3;

#[derive(Debug, Clone)]
pub struct Gru {
    input: usize,
    hidden: usize,
    /// `[3·hidden, input]`, gate order r, u, n
    w_ih: ParamId,
    /// `[3·hidden, hidden]`
    w_hh: ParamId,
    /// `[3·hidden]`
    bias: ParamId,
}

/// Gate activations of every step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruTrace<T> {
    h0: Vec<T>,
    r: Tensor3<T>,
    u: Tensor3<T>,
    n: Tensor3<T>,
    /// `U_n h` before the reset gate is applied.
    hn: Tensor3<T>,
}

struct TileOut<T> {
    y: Vec<T>,
    r: Vec<T>,
    u: Vec<T>,
    n: Vec<T>,
    hn: Vec<T>,
}

impl Gru {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, input: usize, hidden: usize) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::Config(format!("gru {name} has a zero dimension")));
        }
        Ok(Self {
            input,
            hidden,
            w_ih: store.register(format!("{name}.w_ih"), &[3 * hidden, input], Init::Uniform { fan_in: input })?,
            w_hh: store.register(format!("{name}.w_hh"), &[3 * hidden, hidden], Init::Uniform { fan_in: hidden })?,
            bias: store.register(format!("{name}.bias"), &[3 * hidden], Init::Zeros)?,
        })
    }

    pub fn input(&self) -> usize {
        self.input
    }
    pub fn hidden(&self) -> usize {
        self.hidden
    }
    pub fn ids(&self) -> [ParamId; 3] {
        [self.w_ih, self.w_hh, self.bias]
    }

    /// MACs for one step of one sequence: `3·(in·hidden + hidden·hidden)`.
    pub fn macs_per_step(&self) -> u64 {
        gru_step_macs(self.input, self.hidden)
    }

    /// One recurrence step. `gates` must hold `6·hidden` scratch values; when
    /// `trace` is given it receives `(r, u, n, U_n h)`.
    #[inline]
    pub fn step<T: Real>(
        &self,
        p: &Params<T>,
        x: &[T],
        h: &[T],
        h_new: &mut [T],
        gates: &mut [T],
        trace: Option<[&mut [T]; 4]>,
    ) {
        let (nh, ni) = (self.hidden, self.input);
        let (w_ih, w_hh, b) = (p.get(self.w_ih), p.get(self.w_hh), p.get(self.bias));
        let (gi, gh) = gates.split_at_mut(3 * nh);
        for (j, g) in gi.iter_mut().enumerate() {
            *g = dot_seq(&w_ih[j * ni..(j + 1) * ni], x);
        }
        for (j, g) in gh.iter_mut().enumerate() {
            *g = dot_seq(&w_hh[j * nh..(j + 1) * nh], h);
        }
        match trace {
            Some([r_out, u_out, n_out, hn_out]) => {
                for k in 0..nh {
                    let r = sigmoid(gi[k] + gh[k] + b[k]);
                    let u = sigmoid(gi[nh + k] + gh[nh + k] + b[nh + k]);
                    let hn = gh[2 * nh + k];
                    let n = (gi[2 * nh + k] + r * hn + b[2 * nh + k]).tanh();
                    h_new[k] = (T::one() - u) * n + u * h[k];
                    r_out[k] = r;
                    u_out[k] = u;
                    n_out[k] = n;
                    hn_out[k] = hn;
                }
            }
            None => {
                for k in 0..nh {
                    let r = sigmoid(gi[k] + gh[k] + b[k]);
                    let u = sigmoid(gi[nh + k] + gh[nh + k] + b[nh + k]);
                    let n = (gi[2 * nh + k] + r * gh[2 * nh + k] + b[2 * nh + k]).tanh();
                    h_new[k] = (T::one() - u) * n + u * h[k];
                }
            }
        }
    }

    /// Run one sequence from `h0`; returns every hidden output and the final state.
    pub fn run_sequence<T: Real>(&self, p: &Params<T>, xs: &[Vec<T>], h0: &[T]) -> Result<(Vec<Vec<T>>, Vec<T>)> {
        if h0.len() != self.hidden || xs.iter().any(|x| x.len() != self.input) {
            return Err(Error::shape("gru sequence dimensions"));
        }
        let mut h = h0.to_vec();
        let mut gates = vec![T::zero(); 6 * self.hidden];
        let mut ys = Vec::with_capacity(xs.len());
        for x in xs {
            let mut next = vec![T::zero(); self.hidden];
            self.step(p, x, &h, &mut next, &mut gates, None);
            ys.push(next.clone());
            h = next;
        }
        Ok((ys, h))
    }

    fn check<T: Real>(&self, x: &Tensor3<T>, state: &[T]) -> Result<()> {
        if x.channels() != self.input {
            return Err(Error::shape(format!(
                "gru expects {} features, got {}",
                self.input,
                x.channels()
            )));
        }
        if state.len() != x.bands() * self.hidden {
            return Err(Error::shape(format!(
                "gru state holds {} values, expected {} bands × {}",
                state.len(),
                x.bands(),
                self.hidden
            )));
        }
        Ok(())
    }

    /// Recurrence for bands `b0..b0 + h.len() / hidden`, all advanced together
    /// so the gate products run across bands. Outputs are `[t][band][k]`.
    fn run_tile<T: Real>(&self, p: &Params<T>, x: &Tensor3<T>, b0: usize, h: &mut [T], traced: bool) -> TileOut<T> {
        let (nh, ni, frames) = (self.hidden, self.input, x.frames());
        let n = h.len() / nh;
        let (w_ih, w_hh, b) = (p.get(self.w_ih), p.get(self.w_hh), p.get(self.bias));
        let len = frames * n * nh;
        let mut out = TileOut {
            y: Vec::with_capacity(len),
            r: Vec::with_capacity(if traced { len } else { 0 }),
            u: Vec::with_capacity(if traced { len } else { 0 }),
            n: Vec::with_capacity(if traced { len } else { 0 }),
            hn: Vec::with_capacity(if traced { len } else { 0 }),
        };
        let mut gi = vec![T::zero(); n * 3 * nh];
        let mut gh = vec![T::zero(); n * 3 * nh];
        let mut scratch = Vec::new();
        for t in 0..frames {
            let xt = &x.frame(t)[b0 * ni..(b0 + n) * ni];
            matmul_positions(w_ih, 3 * nh, ni, xt, &mut gi, &mut scratch);
            matmul_positions(w_hh, 3 * nh, nh, h, &mut gh, &mut scratch);
            for (band, hb) in h.chunks_exact_mut(nh).enumerate() {
                let (gi, gh) = (&gi[band * 3 * nh..(band + 1) * 3 * nh], &gh[band * 3 * nh..(band + 1) * 3 * nh]);
                for k in 0..nh {
                    let r = sigmoid(gi[k] + gh[k] + b[k]);
                    let u = sigmoid(gi[nh + k] + gh[nh + k] + b[nh + k]);
                    let hn = gh[2 * nh + k];
                    let nv = (gi[2 * nh + k] + r * hn + b[2 * nh + k]).tanh();
                    hb[k] = (T::one() - u) * nv + u * hb[k];
                    if traced {
                        out.r.push(r);
                        out.u.push(u);
                        out.n.push(nv);
                        out.hn.push(hn);
                    }
                }
                out.y.extend_from_slice(hb);
            }
        }
        out
    }

    /// Runs every band tile (in parallel on the current rayon pool) and
    /// scatters the per-tile outputs back to `[hidden, bands, frames]`.
    fn run<T: Real>(&self, p: &Params<T>, x: &Tensor3<T>, state: &mut [T], traced: bool) -> Result<(Tensor3<T>, Option<GruTrace<T>>)> {
        self.check(x, state)?;
        let (bands, frames, nh) = (x.bands(), x.frames(), self.hidden);
        let h0 = if traced { state.to_vec() } else { Vec::new() };
        let tiles: Vec<TileOut<T>> = state
            .par_chunks_mut(TILE * nh)
            .enumerate()
            .map(|(i, h)| self.run_tile(p, x, i * TILE, h, traced))
            .collect();
        let scatter = |pick: &dyn Fn(&TileOut<T>) -> &Vec<T>| {
            let mut y = Tensor3::zeros(nh, bands, frames);
            for (i, tile) in tiles.iter().enumerate() {
                let b0 = i * TILE;
                let n = TILE.min(bands - b0);
                let src = pick(tile);
                for t in 0..frames {
                    y.frame_mut(t)[b0 * nh..(b0 + n) * nh].copy_from_slice(&src[t * n * nh..(t + 1) * n * nh]);
                }
            }
            y
        };
        let y = scatter(&|o| &o.y);
        let trace = traced.then(|| GruTrace {
            h0,
            r: scatter(&|o| &o.r),
            u: scatter(&|o| &o.u),
            n: scatter(&|o| &o.n),
            hn: scatter(&|o| &o.hn),
        });
        Ok((y, trace))
    }

    /// Independent recurrence per band with shared weights. `state` holds one
    /// hidden vector per band (`bands × hidden`) and is advanced in place.
    pub fn forward<T: Real>(&self, p: &Params<T>, x: &Tensor3<T>, state: &mut [T]) -> Result<Tensor3<T>> {
        Ok(self.run(p, x, state, false)?.0)
    }

    /// Forward that records gate activations for [`backward`](Self::backward).
    pub fn forward_traced<T: Real>(
        &self,
        p: &Params<T>,
        x: &Tensor3<T>,
        state: &mut [T],
    ) -> Result<(Tensor3<T>, GruTrace<T>)> {
        let (y, trace) = self.run(p, x, state, true)?;
        Ok((y, trace.expect("traced run")))
    }

    /// Backpropagation through time. `y` is the output of the traced forward.
    /// Gradient into the initial state is dropped.
    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        grads: &mut Grads<T>,
        x: &Tensor3<T>,
        y: &Tensor3<T>,
        trace: &GruTrace<T>,
        grad_y: &Tensor3<T>,
    ) -> Result<Tensor3<T>> {
        if grad_y.dims() != y.dims() || y.dims() != trace.r.dims() {
            return Err(Error::shape("gru backward dimensions"));
        }
        let (bands, frames, nh, ni) = (x.bands(), x.frames(), self.hidden, self.input);
        let (w_ih, w_hh) = (p.get(self.w_ih), p.get(self.w_hh));
        let mut g_ih = vec![T::zero(); w_ih.len()];
        let mut g_hh = vec![T::zero(); w_hh.len()];
        let mut g_b = vec![T::zero(); 3 * nh];
        let mut gx = Tensor3::zeros(ni, bands, frames);
        // da: gate pre-activation grads as seen by W_ih (r, u, n);
        // dah: same as seen by W_hh (the n row is scaled by r).
        let mut da = vec![T::zero(); 3 * nh];
        let mut dah = vec![T::zero(); 3 * nh];
        let mut dh = vec![T::zero(); nh];
        let mut dh_prev = vec![T::zero(); nh];
        for b in 0..bands {
            dh_prev.iter_mut().for_each(|v| *v = T::zero());
            for t in (0..frames).rev() {
                let h_prev: &[T] = if t == 0 {
                    &trace.h0[b * nh..(b + 1) * nh]
                } else {
                    y.position(b, t - 1)
                };
                let (r, u, n, hn) = (
                    trace.r.position(b, t),
                    trace.u.position(b, t),
                    trace.n.position(b, t),
                    trace.hn.position(b, t),
                );
                for k in 0..nh {
                    dh[k] = grad_y.get(k, b, t) + dh_prev[k];
                }
                for k in 0..nh {
                    let dn = dh[k] * (T::one() - u[k]);
                    let du = dh[k] * (h_prev[k] - n[k]);
                    let dan = dn * (T::one() - n[k] * n[k]);
                    let dr = dan * hn[k];
                    da[k] = dr * r[k] * (T::one() - r[k]);
                    da[nh + k] = du * u[k] * (T::one() - u[k]);
                    da[2 * nh + k] = dan;
                    dah[k] = da[k];
                    dah[nh + k] = da[nh + k];
                    dah[2 * nh + k] = dan * r[k];
                    dh_prev[k] = dh[k] * u[k];
                }
                let xin = x.position(b, t);
                let gxin = gx.position_mut(b, t);
                for j in 0..3 * nh {
                    let a = da[j];
                    g_b[j] += a;
                    if a != T::zero() {
                        axpy(a, xin, &mut g_ih[j * ni..(j + 1) * ni]);
                        axpy(a, &w_ih[j * ni..(j + 1) * ni], gxin);
                    }
                    let ah = dah[j];
                    if ah != T::zero() {
                        axpy(ah, h_prev, &mut g_hh[j * nh..(j + 1) * nh]);
                        axpy(ah, &w_hh[j * nh..(j + 1) * nh], &mut dh_prev);
                    }
                }
            }
        }
        for (id, g) in [(self.w_ih, g_ih), (self.w_hh, g_hh), (self.bias, g_b)] {
            for (a, v) in grads.get_mut(id).iter_mut().zip(&g) {
                *a += *v;
            }
        }
        Ok(gx)
    }
}

pub fn gru_step_macs(input: usize, hidden: usize) -> u64 {
    3 * (input * hidden + hidden * hidden) as u64
}
