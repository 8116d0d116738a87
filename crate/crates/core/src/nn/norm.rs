use crate::error::{Error, Result};
use crate::nn::params::{Grads, Init, ParamId, ParamStore, Params};
use crate::scalar::Real;
use crate::tensor::Tensor3;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalization over the feature axis at every `(band, frame)` position.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    dim: usize,
    gain: ParamId,
    bias: ParamId,
}

/// Normalize one vector: `(x - mean) / sqrt(var + eps) * gain + bias`.
pub fn layernorm_forward<T: Real>(x: &[T], gain: &[T], bias: &[T], out: &mut [T]) {
    let (mean, rstd) = moments(x);
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * rstd * gain[i] + bias[i];
    }
}

/// Returns the input gradient; accumulates `gain`/`bias` gradients.
pub fn layernorm_backward<T: Real>(
    x: &[T],
    gain: &[T],
    grad_out: &[T],
    grad_x: &mut [T],
    grad_gain: &mut [T],
    grad_bias: &mut [T],
) {
    let n = T::cst(x.len() as f64);
    let (mean, rstd) = moments(x);
    let mut sum_g = T::zero();
    let mut sum_gx = T::zero();
    for i in 0..x.len() {
        let xhat = (x[i] - mean) * rstd;
        let g = grad_out[i] * gain[i];
        grad_gain[i] += grad_out[i] * xhat;
        grad_bias[i] += grad_out[i];
        sum_g += g;
        sum_gx += g * xhat;
    }
    let (mg, mgx) = (sum_g / n, sum_gx / n);
    for i in 0..x.len() {
        let xhat = (x[i] - mean) * rstd;
        grad_x[i] = rstd * (grad_out[i] * gain[i] - mg - xhat * mgx);
    }
}

#[inline]
fn moments<T: Real>(x: &[T]) -> (T, T) {
    let n = T::cst(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + T::cst(LAYER_NORM_EPS)).sqrt())
}

impl LayerNorm {
    /// Gain initialized to one, bias to zero.
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("layer norm needs at least one feature".into()));
        }
        Ok(Self {
            dim,
            gain: store.register(format!("{name}.gain"), &[dim], Init::Ones)?,
            bias: store.register(format!("{name}.bias"), &[dim], Init::Zeros)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gain_id(&self) -> ParamId {
        self.gain
    }

    pub fn bias_id(&self) -> ParamId {
        self.bias
    }

    fn check<T: Real>(&self, x: &Tensor3<T>) -> Result<()> {
        if x.channels() != self.dim {
            return Err(Error::shape(format!(
                "layer norm over {} features got {}",
                self.dim,
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, p: &Params<T>, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.check(x)?;
        let (gain, bias) = (p.get(self.gain), p.get(self.bias));
        let mut y = Tensor3::zeros(x.channels(), x.bands(), x.frames());
        for (xi, yi) in x
            .as_slice()
            .chunks_exact(self.dim)
            .zip(y.as_mut_slice().chunks_exact_mut(self.dim))
        {
            layernorm_forward(xi, gain, bias, yi);
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
        self.check(x)?;
        let gain = p.get(self.gain);
        let mut gg = vec![T::zero(); self.dim];
        let mut gb = vec![T::zero(); self.dim];
        let mut gx = Tensor3::zeros(x.channels(), x.bands(), x.frames());
        for ((xi, gyi), gxi) in x
            .as_slice()
            .chunks_exact(self.dim)
            .zip(grad_out.as_slice().chunks_exact(self.dim))
            .zip(gx.as_mut_slice().chunks_exact_mut(self.dim))
        {
            layernorm_backward(xi, gain, gyi, gxi, &mut gg, &mut gb);
        }
        for (a, b) in grads.get_mut(self.gain).iter_mut().zip(&gg) {
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
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_input_yields_bias() {
        let bias = [0.3, -0.2, 0.1];
        let mut out = [0.0; 3];
        layernorm_forward(&[2.5f64; 3], &[1.7, 0.4, 2.0], &bias, &mut out);
        for (o, b) in out.iter().zip(&bias) {
            assert!((o - b).abs() < 1e-12);
        }
    }

    #[test]
    fn output_moments_follow_gain_and_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..256).map(|_| rng.random_range(-3.0..5.0)).collect();
        let gain = vec![2.0; 256];
        let bias = vec![0.5; 256];
        let mut y = vec![0.0; 256];
        layernorm_forward(&x, &gain, &bias, &mut y);
        let mean = y.iter().sum::<f64>() / 256.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 256.0;
        assert!((mean - 0.5).abs() < 1e-9);
        assert!((var - 4.0).abs() < 1e-3);
    }
}
