use crate::error::{Error, Result};
use crate::nn::params::{Grads, Init, ParamId, ParamStore, Params};
use crate::scalar::{axpy, dot_seq, matmul_positions, Real};
use crate::tensor::Tensor3;

/// Affine map over the feature axis, applied at every `(band, frame)` position.
#[derive(Debug, Clone)]
pub struct Linear {
    in_dim: usize,
    out_dim: usize,
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    /// Weight `[out, in]`, bias `[out]`.
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config(format!("linear {name} has a zero dimension")));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight: store.register(format!("{name}.weight"), &[out_dim, in_dim], Init::Uniform { fan_in: in_dim })?,
            bias: store.register(format!("{name}.bias"), &[out_dim], Init::Zeros)?,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
    pub fn weight_id(&self) -> ParamId {
        self.weight
    }
    pub fn bias_id(&self) -> ParamId {
        self.bias
    }

    /// MACs per position: `in × out`.
    pub fn macs(&self, positions: usize) -> u64 {
        (positions * self.in_dim * self.out_dim) as u64
    }

    #[inline]
    pub fn apply<T: Real>(&self, p: &Params<T>, x: &[T], y: &mut [T]) {
        let (w, b) = (p.get(self.weight), p.get(self.bias));
        for (o, yo) in y.iter_mut().enumerate() {
            *yo = dot_seq(&w[o * self.in_dim..(o + 1) * self.in_dim], x) + b[o];
        }
    }

    pub fn forward<T: Real>(&self, p: &Params<T>, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        if x.channels() != self.in_dim {
            return Err(Error::shape(format!(
                "linear expects {} features, got {}",
                self.in_dim,
                x.channels()
            )));
        }
        let mut y = Tensor3::zeros(self.out_dim, x.bands(), x.frames());
        let (w, b) = (p.get(self.weight), p.get(self.bias));
        matmul_positions(w, self.out_dim, self.in_dim, x.as_slice(), y.as_mut_slice(), &mut Vec::new());
        for yi in y.as_mut_slice().chunks_exact_mut(self.out_dim) {
            for (v, bo) in yi.iter_mut().zip(b) {
                *v += *bo;
            }
        }
        Ok(y)
    }

    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        grads: &mut Grads<T>,
        x: &Tensor3<T>,
        grad_out: &Tensor3<T>,
    ) -> Result<Tensor3<T>> {
        if x.channels() != self.in_dim || grad_out.channels() != self.out_dim {
            return Err(Error::shape("linear backward feature mismatch"));
        }
        let w = p.get(self.weight);
        let mut gw = vec![T::zero(); w.len()];
        let mut gb = vec![T::zero(); self.out_dim];
        let mut gx = Tensor3::zeros(self.in_dim, x.bands(), x.frames());
        for ((xi, gyi), gxi) in x
            .as_slice()
            .chunks_exact(self.in_dim)
            .zip(grad_out.as_slice().chunks_exact(self.out_dim))
            .zip(gx.as_mut_slice().chunks_exact_mut(self.in_dim))
        {
            for (o, &g) in gyi.iter().enumerate() {
                if g == T::zero() {
                    continue;
                }
                gb[o] += g;
                let row = o * self.in_dim..(o + 1) * self.in_dim;
                axpy(g, xi, &mut gw[row.clone()]);
                axpy(g, &w[row], gxi);
            }
        }
        for (a, b) in grads.get_mut(self.weight).iter_mut().zip(&gw) {
            *a += *b;
        }
        for (a, b) in grads.get_mut(self.bias).iter_mut().zip(&gb) {
            *a += *b;
        }
        Ok(gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_through() {
        let mut st = ParamStore::<f64>::new();
        let l = Linear::new(&mut st, "l", 4, 4).unwrap();
        let w = st.params_mut().get_mut(l.weight_id());
        w.fill(0.0);
        for i in 0..4 {
            w[i * 5] = 1.0;
        }
        let x = Tensor3::from_fn(4, 3, 2, |c, b, t| (c as f64 - b as f64) * (t as f64 + 0.5));
        assert_eq!(l.forward(st.params(), &x).unwrap(), x);
    }

    #[test]
    fn macs_per_position() {
        let mut st = ParamStore::<f32>::new();
        let l = Linear::new(&mut st, "l", 144, 72).unwrap();
        assert_eq!(l.macs(1), 10_368);
        assert_eq!(l.macs(64), 663_552);
    }
}
