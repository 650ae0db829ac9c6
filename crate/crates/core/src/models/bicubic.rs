//! Catmull-Rom bicubic resampling (a = -0.5) by exactly 2x in either
//! direction, with edge replication.
//!
//! The resize is a fixed sparse linear map; `bicubic_resize_backward`
//! applies its exact transpose, which the compact-training path needs to
//! push gradients through the upscaler.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeDir {
    /// Double both spatial dims.
    Up2,
    /// Halve both spatial dims (ceil for odd sizes).
    Down2,
}

/// Catmull-Rom kernel value.
fn kernel(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// 4-tap weights and base source index for one output coordinate. The
/// sample-center mapping is src = (dst + 0.5)/scale - 0.5.
fn taps(dst: usize, dir: ResizeDir) -> (isize, [f64; 4]) {
    let src = match dir {
        ResizeDir::Up2 => (dst as f64 + 0.5) / 2.0 - 0.5,
        ResizeDir::Down2 => (dst as f64 + 0.5) * 2.0 - 0.5,
    };
    let base = src.floor() as isize;
    let f = src - base as f64;
    (
        base - 1,
        [kernel(1.0 + f), kernel(f), kernel(1.0 - f), kernel(2.0 - f)],
    )
}

fn out_len(n: usize, dir: ResizeDir) -> usize {
    match dir {
        ResizeDir::Up2 => 2 * n,
        ResizeDir::Down2 => n.div_ceil(2),
    }
}

/// 1-D pass along a strided line: out[j] = sum_m w[m] * in[clamp(base+m)].
fn resize_line(input: &[f64], in_len: usize, in_stride: usize, out: &mut [f64], out_stride: usize, dir: ResizeDir) {
    let n_out = out_len(in_len, dir);
    for j in 0..n_out {
        let (base, w) = taps(j, dir);
        let mut acc = 0.0;
        for (m, &wm) in w.iter().enumerate() {
            let idx = (base + m as isize).clamp(0, in_len as isize - 1) as usize;
            acc += wm * input[idx * in_stride];
        }
        out[j * out_stride] = acc;
    }
}

/// Transpose of `resize_line`: scatter-adds out-gradients onto the input.
fn resize_line_transpose(
    grad_out: &[f64],
    in_len: usize,
    in_stride: usize,
    grad_in: &mut [f64],
    out_stride: usize,
    dir: ResizeDir,
) {
    let n_out = out_len(in_len, dir);
    for j in 0..n_out {
        let (base, w) = taps(j, dir);
        let g = grad_out[j * out_stride];
        for (m, &wm) in w.iter().enumerate() {
            let idx = (base + m as isize).clamp(0, in_len as isize - 1) as usize;
            grad_in[idx * in_stride] += wm * g;
        }
    }
}

/// Separable resize: rows, then columns.
pub fn bicubic_resize(t: &Tensor, dir: ResizeDir) -> Tensor {
    let (n, c, h, w) = t.dims();
    let (oh, ow) = (out_len(h, dir), out_len(w, dir));
    let mut mid = vec![0.0; h * ow]; // one plane at a time
    let mut out = Tensor::zeros(n, c, oh, ow);
    for s in 0..n {
        for ci in 0..c {
            let plane = t.plane(s, ci);
            for y in 0..h {
                resize_line(&plane[y * w..(y + 1) * w], w, 1, &mut mid[y * ow..(y + 1) * ow], 1, dir);
            }
            let base = (s * c + ci) * oh * ow;
            let oplane = &mut out.data_mut()[base..base + oh * ow];
            for x in 0..ow {
                resize_line(&mid[x..], h, ow, &mut oplane[x..], ow, dir);
            }
        }
    }
    out
}

/// Exact adjoint of `bicubic_resize`: maps output-shaped gradients back to
/// input-shaped ones.
pub fn bicubic_resize_backward(
    grad_out: &Tensor,
    dir: ResizeDir,
    in_h: usize,
    in_w: usize,
) -> Result<Tensor> {
    let (n, c, goh, gow) = grad_out.dims();
    if goh != out_len(in_h, dir) || gow != out_len(in_w, dir) {
        return Err(Error::shape(format!(
            "gradient dims {goh}x{gow} do not match resize of {in_h}x{in_w}"
        )));
    }
    let mut mid = vec![0.0; in_h * gow];
    let mut grad_in = Tensor::zeros(n, c, in_h, in_w);
    for s in 0..n {
        for ci in 0..c {
            let gplane = grad_out.plane(s, ci);
            // transpose of the column pass
            mid.fill(0.0);
            for x in 0..gow {
                resize_line_transpose(&gplane[x..], in_h, gow, &mut mid[x..], gow, dir);
            }
            // transpose of the row pass
            let base = (s * c + ci) * in_h * in_w;
            let iplane = &mut grad_in.data_mut()[base..base + in_h * in_w];
            for y in 0..in_h {
                resize_line_transpose(
                    &mid[y * gow..(y + 1) * gow],
                    in_w,
                    1,
                    &mut iplane[y * in_w..(y + 1) * in_w],
                    1,
                    dir,
                );
            }
        }
    }
    Ok(grad_in)
}
