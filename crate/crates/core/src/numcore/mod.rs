//! Dense linear algebra, initialisation, optimisation and gradient checking.

mod adam;
mod gradcheck;
mod init;
mod matrix;
pub mod tensor_io;

pub use adam::{adam_step, AdamConfig, AdamState, ParamTensor};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use init::{xavier_bound, xavier_uniform_init};
pub use matrix::{matmul, Matrix};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `sign(x)` with the subgradient convention `sign(0) = 0`.
#[inline]
pub fn l1_subgradient(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
