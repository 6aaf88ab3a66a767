//! Gradient-free kernels over [`Tensor`] for inference paths and oracles.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use statrs::function::erf::erf;

use crate::error::{shape_err, NumericsError, Result};
use crate::tensor::{matmul_kernel, require_matrix, Tensor};

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = require_matrix("matmul", a)?;
    let (k2, m) = require_matrix("matmul", b)?;
    if k != k2 {
        return shape_err("matmul", a.shape(), b.shape());
    }
    Tensor::new(vec![n, m], matmul_kernel(a.data(), b.data(), n, k, m))
}

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return shape_err("hadamard", a.shape(), b.shape());
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// GELU in its exact form `x * Phi(x) = x/2 * (1 + erf(x / sqrt 2))`.
pub fn gelu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| gelu_scalar(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x * FRAC_1_SQRT_2))
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

/// Softmax along `axis` of a vector (axis 0) or matrix (axis 0 or 1).
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    match (x.shape().len(), axis) {
        (1, 0) => {
            let mut d = x.data().to_vec();
            softmax_in_place(&mut d);
            Tensor::new(x.shape().to_vec(), d)
        }
        (2, 1) => {
            let mut d = x.data().to_vec();
            d.chunks_mut(x.cols()).for_each(softmax_in_place);
            Tensor::new(x.shape().to_vec(), d)
        }
        (2, 0) => {
            let (n, m) = (x.shape()[0], x.shape()[1]);
            let mut out = vec![0.0; n * m];
            let mut col = vec![0.0; n];
            for j in 0..m {
                (0..n).for_each(|i| col[i] = x.data()[i * m + j]);
                softmax_in_place(&mut col);
                (0..n).for_each(|i| out[i * m + j] = col[i]);
            }
            Tensor::new(x.shape().to_vec(), out)
        }
        _ => Err(NumericsError::Contract(format!(
            "softmax axis {axis} invalid for shape {:?}",
            x.shape()
        ))),
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter_mut().for_each(|v| *v -= lse);
}

/// First component of a two-class softmax over `[a, b]`, i.e. `1 / (1 + e^(b - a))`.
pub fn two_class_first(a: f64, b: f64) -> f64 {
    let mut r = [a, b];
    softmax_in_place(&mut r);
    r[0]
}
