//! Tensor math for the two fixed network topologies.
//!
//! Everything is 64-bit, deterministic, and backed by plain row-major
//! buffers; there is no computation graph. Each layer exposes an explicit
//! forward and backward, and `gradcheck` verifies every backward against
//! central finite differences.

mod adam;
mod batchnorm;
mod conv;
mod gemm;
pub mod gradcheck;
mod init;
mod winograd;

pub use adam::{adam_step, AdamState};
pub use batchnorm::{BatchNormLayer, BnCache, BnGrads};
pub use conv::{ConvGrads, ConvLayer};
pub use gradcheck::finite_diff_grad_check;
pub use init::he_init;

use crate::error::{Error, Result};

/// Rank-4 array (batch, channel, height, width), row-major with `w` fastest,
/// plus an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: [usize; 4],
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor {
            dims: [n, c, h, w],
            data: vec![0.0; n * c * h * w],
            grad: None,
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::shape(format!(
                "data length {} does not match dims {}x{}x{}x{}",
                data.len(),
                n,
                c,
                h,
                w
            )));
        }
        Ok(Tensor {
            dims: [n, c, h, w],
            data,
            grad: None,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.dims[0], self.dims[1], self.dims[2], self.dims[3])
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[((n * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) {
        self.data[((n * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w] = v;
    }

    /// One sample's channel plane as a slice.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &self.data[start..start + hw]
    }

    /// One whole sample (all channels) as a slice.
    pub fn sample(&self, n: usize) -> &[f64] {
        let chw = self.dims[1] * self.dims[2] * self.dims[3];
        &self.data[n * chw..(n + 1) * chw]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f64] {
        let chw = self.dims[1] * self.dims[2] * self.dims[3];
        &mut self.data[n * chw..(n + 1) * chw]
    }

    /// Allocates (or clears) the gradient buffer.
    pub fn alloc_grad(&mut self) {
        self.grad = Some(vec![0.0; self.data.len()]);
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn same_dims(&self, other: &Tensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}

/// Elementwise max(x, 0).
pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.grad = None;
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Passes gradient where the cached forward input was > 0; the gradient at
/// exactly 0 is defined as 0.
pub fn relu_backward(grad_out: &Tensor, cached_input: &Tensor) -> Result<Tensor> {
    grad_out.same_dims(cached_input)?;
    let mut grad_in = grad_out.clone();
    grad_in.grad = None;
    for (g, &x) in grad_in.data_mut().iter_mut().zip(cached_input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(grad_in)
}

/// Mean squared error with the 1/(2N) convention, N = batch size.
///
/// Returns the loss and its gradient with respect to `pred`,
/// `(pred - target) / N`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    pred.same_dims(target)?;
    let n = pred.batch() as f64;
    if pred.batch() == 0 {
        return Err(Error::param("mse_loss on an empty batch".to_string()));
    }
    let mut grad = Tensor::zeros(pred.dims[0], pred.dims[1], pred.dims[2], pred.dims[3]);
    let mut sum = 0.0;
    for ((g, &p), &t) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(target.data())
    {
        let d = p - t;
        sum += d * d;
        *g = d / n;
    }
    Ok((sum / (2.0 * n), grad))
}
