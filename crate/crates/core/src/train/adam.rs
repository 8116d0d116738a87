use crate::nn::{Grads, Params};
use crate::scalar::Real;

/// Adam with bias correction. Moments are kept per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &Params<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|(_, v)| vec![T::zero(); v.len()]).collect();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: &mut Params<T>, grads: &Grads<T>, lr: f64) {
        self.step += 1;
        let (b1, b2) = (T::cst(self.beta1), T::cst(self.beta2));
        let c1 = T::cst(1.0 - self.beta1.powi(self.step));
        let c2 = T::cst(1.0 - self.beta2.powi(self.step));
        let (lr, eps) = (T::cst(lr), T::cst(self.eps));
        for ((((_, p), g), m), v) in params.iter_mut().zip(grads.iter()).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
