//! 3x3 convolution with zero padding of 1, stride 1 or 2.
//!
//! Cross-correlation convention (no kernel flip). Stride-1 layers on
//! reasonably sized inputs route through the Winograd F(4x4,3x3) path;
//! everything else uses direct im2col + GEMM. Both paths are exact
//! implementations of the same linear map and are cross-checked in tests.
//!
//! Batch samples are processed in parallel; every cross-sample reduction
//! (weight and bias gradients) folds per-sample partials in sample order,
//! so results are bit-identical to a sequential run.

use std::cell::RefCell;

use rayon::prelude::*;

use super::gemm::{gemm, GemmScratch, PackedA};
use super::{winograd, Tensor};
use crate::error::{Error, Result};

pub(super) const KSIZE: usize = 3;
pub(super) const PAD: usize = 1;

/// Spatial size below which the Winograd path is not worth its transforms.
const WINOGRAD_MIN_PIXELS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// (out_ch, in_ch, 3, 3), row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
}

/// Parameter gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn new(in_ch: usize, out_ch: usize, stride: usize) -> Result<Self> {
        if !(stride == 1 || stride == 2) {
            return Err(Error::param(format!("conv stride must be 1 or 2, got {stride}")));
        }
        if in_ch == 0 || out_ch == 0 {
            return Err(Error::param("conv channel counts must be positive".to_string()));
        }
        Ok(ConvLayer {
            weights: vec![0.0; out_ch * in_ch * KSIZE * KSIZE],
            bias: vec![0.0; out_ch],
            in_ch,
            out_ch,
            stride,
        })
    }

    /// Output spatial dims: ceil(h/stride) x ceil(w/stride).
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.channels() != self.in_ch {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_ch,
                input.channels()
            )));
        }
        if input.height() == 0 || input.width() == 0 {
            return Err(Error::shape("conv input has empty spatial dims".to_string()));
        }
        Ok(())
    }

    fn use_winograd(&self, h: usize, w: usize) -> bool {
        self.stride == 1 && h * w >= WINOGRAD_MIN_PIXELS
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let (n, _, h, w) = input.dims();
        let (oh, ow) = self.out_dims(h, w);
        let mut out = Tensor::zeros(n, self.out_ch, oh, ow);
        if self.use_winograd(h, w) {
            winograd::forward(self, input, &mut out);
        } else {
            self.direct_forward(input, &mut out);
        }
        Ok(out)
    }

    /// Gradients for input, weights and bias.
    pub fn backward(
        &self,
        grad_out: &Tensor,
        cached_input: &Tensor,
    ) -> Result<(Tensor, ConvGrads)> {
        let (grad_in, grads) = self.backward_impl(grad_out, cached_input, true)?;
        Ok((grad_in, grads.expect("weight grads requested")))
    }

    /// Input gradient only; used when this layer's parameters are frozen.
    pub fn backward_input(&self, grad_out: &Tensor, cached_input: &Tensor) -> Result<Tensor> {
        let (grad_in, _) = self.backward_impl(grad_out, cached_input, false)?;
        Ok(grad_in)
    }

    fn backward_impl(
        &self,
        grad_out: &Tensor,
        cached_input: &Tensor,
        want_wgrads: bool,
    ) -> Result<(Tensor, Option<ConvGrads>)> {
        self.check_input(cached_input)?;
        let (n, _, h, w) = cached_input.dims();
        let (oh, ow) = self.out_dims(h, w);
        if grad_out.dims() != (n, self.out_ch, oh, ow) {
            return Err(Error::shape(format!(
                "conv grad_out dims {:?} do not match output {:?}",
                grad_out.dims(),
                (n, self.out_ch, oh, ow)
            )));
        }
        let mut grad_in = Tensor::zeros(n, self.in_ch, h, w);
        let grads = if self.use_winograd(h, w) {
            winograd::backward(self, grad_out, cached_input, &mut grad_in, want_wgrads)
        } else {
            self.direct_backward(grad_out, cached_input, &mut grad_in, want_wgrads)
        };
        Ok((grad_in, grads))
    }

    fn direct_forward(&self, input: &Tensor, out: &mut Tensor) {
        let (_, _, h, w) = input.dims();
        let (oh, ow) = self.out_dims(h, w);
        let k = self.in_ch * KSIZE * KSIZE;
        let npix = oh * ow;
        let wpack = PackedA::pack(&self.weights, self.out_ch, k);
        let out_chw = self.out_ch * npix;
        out.data_mut()
            .par_chunks_mut(out_chw)
            .enumerate()
            .for_each(|(s, out_s)| {
                with_col_scratch(|col, scratch| {
                    col.resize(k * npix, 0.0);
                    im2col(input.sample(s), self.in_ch, h, w, self.stride, oh, ow, col);
                    for (ch, &b) in out_s.chunks_mut(npix).zip(self.bias.iter()) {
                        ch.fill(b);
                    }
                    gemm(&wpack, col, out_s, npix, scratch);
                });
            });
    }

    fn direct_backward(
        &self,
        grad_out: &Tensor,
        cached_input: &Tensor,
        grad_in: &mut Tensor,
        want_wgrads: bool,
    ) -> Option<ConvGrads> {
        let (_, _, h, w) = cached_input.dims();
        let (oh, ow) = self.out_dims(h, w);
        let k = self.in_ch * KSIZE * KSIZE;
        let npix = oh * ow;
        // W^T as a (k x out_ch) matrix for the input gradient.
        let mut wt = vec![0.0; k * self.out_ch];
        for co in 0..self.out_ch {
            for p in 0..k {
                wt[p * self.out_ch + co] = self.weights[co * k + p];
            }
        }
        let wtpack = PackedA::pack(&wt, k, self.out_ch);
        let in_chw = self.in_ch * h * w;

        let partials: Vec<Option<ConvGrads>> = grad_in
            .data_mut()
            .par_chunks_mut(in_chw)
            .enumerate()
            .map(|(s, gin_s)| {
                with_col_scratch(|col, scratch| {
                    let gout_s = grad_out.sample(s);
                    // dCol = W^T * dOut, then scatter back to input positions.
                    col.resize(k * npix, 0.0);
                    col.fill(0.0);
                    gemm(&wtpack, gout_s, col, npix, scratch);
                    col2im(col, self.in_ch, h, w, self.stride, oh, ow, gin_s);

                    if !want_wgrads {
                        return None;
                    }
                    let mut g = ConvGrads {
                        weights: vec![0.0; self.out_ch * k],
                        bias: vec![0.0; self.out_ch],
                    };
                    for (co, plane) in gout_s.chunks(npix).enumerate() {
                        g.bias[co] = plane.iter().sum();
                    }
                    // dW = dOut * im2col(x)^T; build the transposed column
                    // matrix directly.
                    col.resize(npix * k, 0.0);
                    im2col_transposed(
                        cached_input.sample(s),
                        self.in_ch,
                        h,
                        w,
                        self.stride,
                        oh,
                        ow,
                        col,
                    );
                    let gpack = PackedA::pack(gout_s, self.out_ch, npix);
                    gemm(&gpack, col, &mut g.weights, k, scratch);
                    Some(g)
                })
            })
            .collect();

        accumulate_partials(partials, self.out_ch, k, want_wgrads)
    }
}

/// Sums per-sample gradient partials in sample order.
pub(super) fn accumulate_partials(
    partials: Vec<Option<ConvGrads>>,
    out_ch: usize,
    k: usize,
    want_wgrads: bool,
) -> Option<ConvGrads> {
    if !want_wgrads {
        return None;
    }
    let mut total = ConvGrads {
        weights: vec![0.0; out_ch * k],
        bias: vec![0.0; out_ch],
    };
    for p in partials.into_iter().flatten() {
        for (t, v) in total.weights.iter_mut().zip(p.weights.iter()) {
            *t += v;
        }
        for (t, v) in total.bias.iter_mut().zip(p.bias.iter()) {
            *t += v;
        }
    }
    Some(total)
}

thread_local! {
    static COL_SCRATCH: RefCell<(Vec<f64>, GemmScratch)> =
        RefCell::new((Vec::new(), GemmScratch::default()));
}

fn with_col_scratch<R>(f: impl FnOnce(&mut Vec<f64>, &mut GemmScratch) -> R) -> R {
    COL_SCRATCH.with(|cell| {
        let (col, scratch) = &mut *cell.borrow_mut();
        f(col, scratch)
    })
}

/// col[(ci*9 + ky*3 + kx) * npix + oy*ow + ox] = padded x[ci][oy*s+ky-1][ox*s+kx-1]
fn im2col(
    x: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    col: &mut [f64],
) {
    let npix = oh * ow;
    for ci in 0..in_ch {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let row = &mut col[((ci * KSIZE + ky) * KSIZE + kx) * npix..][..npix];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - PAD as isize;
                    let dst = &mut row[oy * ow..oy * ow + ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..iy as usize * w + w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - PAD as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Transposed layout: col[(oy*ow + ox) * k + ci*9 + ky*3 + kx].
#[allow(clippy::too_many_arguments)]
fn im2col_transposed(
    x: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    col: &mut [f64],
) {
    let k = in_ch * KSIZE * KSIZE;
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = &mut col[(oy * ow + ox) * k..(oy * ow + ox) * k + k];
            for ci in 0..in_ch {
                let plane = &x[ci * h * w..(ci + 1) * h * w];
                for ky in 0..KSIZE {
                    let iy = (oy * stride + ky) as isize - PAD as isize;
                    for kx in 0..KSIZE {
                        let ix = (ox * stride + kx) as isize - PAD as isize;
                        dst[(ci * KSIZE + ky) * KSIZE + kx] =
                            if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                plane[iy as usize * w + ix as usize]
                            };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column-matrix gradient back onto input positions.
fn col2im(
    col: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    gin: &mut [f64],
) {
    let npix = oh * ow;
    for ci in 0..in_ch {
        let plane = &mut gin[ci * h * w..(ci + 1) * h * w];
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let row = &col[((ci * KSIZE + ky) * KSIZE + kx) * npix..][..npix];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - PAD as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..iy as usize * w + w];
                    for (ox, &v) in row[oy * ow..oy * ow + ow].iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - PAD as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}
