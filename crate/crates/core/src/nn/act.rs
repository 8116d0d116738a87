//! Elementwise activations and their derivatives.

use crate::scalar::{sigmoid as sig, Real};
use crate::tensor::Tensor3;

pub fn sigmoid<T: Real>(x: T) -> T {
    sig(x)
}

/// `x · σ(x)`
pub fn silu<T: Real>(x: T) -> T {
    x * sig(x)
}

/// `d/dx [x σ(x)] = σ(x) (1 + x (1 - σ(x)))`
pub fn silu_grad<T: Real>(x: T) -> T {
    let s = sig(x);
    s * (T::one() + x * (T::one() - s))
}

pub fn silu_tensor<T: Real>(x: &Tensor3<T>) -> Tensor3<T> {
    x.map(silu)
}

/// Gradient through SiLU given the pre-activation input.
pub fn silu_backward<T: Real>(x: &Tensor3<T>, grad_out: &Tensor3<T>) -> Tensor3<T> {
    let mut g = grad_out.clone();
    for (gi, xi) in g.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *gi *= silu_grad(*xi);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(sigmoid(0.0f32), 0.5);
    }

    #[test]
    fn silu_derivative_matches_difference_quotient() {
        for &x in &[-4.0f64, -0.7, 0.0, 0.3, 2.5] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }
}
