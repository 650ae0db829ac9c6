//! Winograd F(4x4, 3x3) path for stride-1 convolutions.
//!
//! Output is tiled into 4x4 blocks; each block needs a 6x6 input window.
//! Per transform position the channel contraction becomes a small GEMM, so
//! an 18-layer 64-channel stack does roughly a third of the multiplies of
//! direct convolution. All transforms are exact rational-coefficient linear
//! maps; forward, input gradient and weight gradient each come from the same
//! factorization, and tests pin this path against the direct one.
//!
//! Tiles are transformed LANES at a time: the transform arithmetic runs on
//! [f64; LANES] arrays (one lane per tile) so it vectorizes, and the
//! scattered tile layout becomes contiguous lane-wide stores.
//!
//! Transform matrices (Y = At (GgGt . BtdB) A):
//!   Bt = [4  0 -5  0 1 0;  0 -4 -4 1 1 0;  0 4 -4 -1 1 0;
//!         0 -2 -1  2 1 0;  0  2 -1 -2 1 0; 0 4  0 -5 0 1]
//!   G  = [1/4 0 0; -1/6 -1/6 -1/6; -1/6 1/6 -1/6;
//!         1/24 1/12 1/6; 1/24 -1/12 1/6; 0 0 1]
//!   At = [1 1 1 1 1 0; 0 1 -1 2 -2 0; 0 1 1 4 4 0; 0 1 -1 8 -8 1]

use std::cell::RefCell;

use rayon::prelude::*;

use super::conv::{ConvGrads, ConvLayer};
use super::gemm::{gemm, GemmScratch, PackedA};
use super::Tensor;

const ALPHA: usize = 6; // transform tile size
const M: usize = 4; // output tile size
const POS: usize = ALPHA * ALPHA; // 36 transform positions
const LANES: usize = 8; // tiles transformed per SIMD batch

type Lane = [f64; LANES];

#[inline(always)]
fn lane_scale(a: f64, x: &Lane) -> Lane {
    let mut o = [0.0; LANES];
    for i in 0..LANES {
        o[i] = a * x[i];
    }
    o
}

#[inline(always)]
fn lane_mul_add(a: f64, x: &Lane, acc: &Lane) -> Lane {
    let mut o = [0.0; LANES];
    for i in 0..LANES {
        o[i] = a.mul_add(x[i], acc[i]);
    }
    o
}

#[inline(always)]
fn lane_add(x: &Lane, y: &Lane) -> Lane {
    let mut o = [0.0; LANES];
    for i in 0..LANES {
        o[i] = x[i] + y[i];
    }
    o
}

#[inline(always)]
fn bt_vec(d: &[Lane; 6]) -> [Lane; 6] {
    let mut o = [[0.0; LANES]; 6];
    // 4 d0 - 5 d2 + d4
    o[0] = lane_mul_add(4.0, &d[0], &lane_mul_add(-5.0, &d[2], &d[4]));
    // -4 d1 - 4 d2 + d3 + d4
    o[1] = lane_mul_add(-4.0, &d[1], &lane_mul_add(-4.0, &d[2], &lane_add(&d[3], &d[4])));
    // 4 d1 - 4 d2 - d3 + d4
    o[2] = lane_mul_add(4.0, &d[1], &lane_mul_add(-4.0, &d[2], &lane_mul_add(-1.0, &d[3], &d[4])));
    // -2 d1 - d2 + 2 d3 + d4
    o[3] = lane_mul_add(-2.0, &d[1], &lane_mul_add(-1.0, &d[2], &lane_mul_add(2.0, &d[3], &d[4])));
    // 2 d1 - d2 - 2 d3 + d4
    o[4] = lane_mul_add(2.0, &d[1], &lane_mul_add(-1.0, &d[2], &lane_mul_add(-2.0, &d[3], &d[4])));
    // 4 d1 - 5 d3 + d5
    o[5] = lane_mul_add(4.0, &d[1], &lane_mul_add(-5.0, &d[3], &d[5]));
    o
}

#[inline(always)]
fn b_vec(v: &[Lane; 6]) -> [Lane; 6] {
    let mut o = [[0.0; LANES]; 6];
    o[0] = lane_scale(4.0, &v[0]);
    o[1] = lane_mul_add(
        -4.0,
        &v[1],
        &lane_mul_add(4.0, &v[2], &lane_mul_add(-2.0, &v[3], &lane_mul_add(2.0, &v[4], &lane_scale(4.0, &v[5])))),
    );
    o[2] = lane_mul_add(
        -5.0,
        &v[0],
        &lane_mul_add(-4.0, &v[1], &lane_mul_add(-4.0, &v[2], &lane_mul_add(-1.0, &v[3], &lane_scale(-1.0, &v[4])))),
    );
    o[3] = lane_mul_add(
        1.0,
        &v[1],
        &lane_mul_add(-1.0, &v[2], &lane_mul_add(2.0, &v[3], &lane_mul_add(-2.0, &v[4], &lane_scale(-5.0, &v[5])))),
    );
    o[4] = lane_add(&v[0], &lane_add(&v[1], &lane_add(&v[2], &lane_add(&v[3], &v[4]))));
    o[5] = v[5];
    o
}

#[inline(always)]
fn at_vec(m: &[Lane; 6]) -> [Lane; 4] {
    let mut o = [[0.0; LANES]; 4];
    o[0] = lane_add(&m[0], &lane_add(&m[1], &lane_add(&m[2], &lane_add(&m[3], &m[4]))));
    o[1] = lane_mul_add(2.0, &m[3], &lane_mul_add(-2.0, &m[4], &lane_mul_add(-1.0, &m[2], &m[1])));
    o[2] = lane_mul_add(4.0, &m[3], &lane_mul_add(4.0, &m[4], &lane_add(&m[1], &m[2])));
    o[3] = lane_mul_add(
        8.0,
        &m[3],
        &lane_mul_add(-8.0, &m[4], &lane_mul_add(-1.0, &m[2], &lane_add(&m[1], &m[5]))),
    );
    o
}

#[inline(always)]
fn a_vec(y: &[Lane; 4]) -> [Lane; 6] {
    let mut o = [[0.0; LANES]; 6];
    o[0] = y[0];
    o[1] = lane_add(&y[0], &lane_add(&y[1], &lane_add(&y[2], &y[3])));
    o[2] = lane_mul_add(-1.0, &y[1], &lane_mul_add(-1.0, &y[3], &lane_add(&y[0], &y[2])));
    o[3] = lane_mul_add(2.0, &y[1], &lane_mul_add(4.0, &y[2], &lane_mul_add(8.0, &y[3], &y[0])));
    o[4] = lane_mul_add(-2.0, &y[1], &lane_mul_add(4.0, &y[2], &lane_mul_add(-8.0, &y[3], &y[0])));
    o[5] = y[3];
    o
}

/// V = Bt d B over a lane batch: columns first, then rows.
#[inline(always)]
fn input_tile_transform(d: &[[Lane; 6]; 6]) -> [[Lane; 6]; 6] {
    let mut cols = [[[0.0; LANES]; 6]; 6];
    for j in 0..6 {
        let col = bt_vec(&[d[0][j], d[1][j], d[2][j], d[3][j], d[4][j], d[5][j]]);
        for i in 0..6 {
            cols[i][j] = col[i];
        }
    }
    let mut out = [[[0.0; LANES]; 6]; 6];
    for (o, c) in out.iter_mut().zip(cols.iter()) {
        *o = bt_vec(c);
    }
    out
}

/// dD = B dV Bt over a lane batch.
#[inline(always)]
fn input_tile_transform_adjoint(v: &[[Lane; 6]; 6]) -> [[Lane; 6]; 6] {
    let mut cols = [[[0.0; LANES]; 6]; 6];
    for j in 0..6 {
        let col = b_vec(&[v[0][j], v[1][j], v[2][j], v[3][j], v[4][j], v[5][j]]);
        for i in 0..6 {
            cols[i][j] = col[i];
        }
    }
    let mut out = [[[0.0; LANES]; 6]; 6];
    for (o, c) in out.iter_mut().zip(cols.iter()) {
        *o = b_vec(c);
    }
    out
}

/// Y = At m A over a lane batch.
#[inline(always)]
fn output_tile_transform(m: &[[Lane; 6]; 6]) -> [[Lane; 4]; 4] {
    let mut cols = [[[0.0; LANES]; 6]; 4];
    for j in 0..6 {
        let col = at_vec(&[m[0][j], m[1][j], m[2][j], m[3][j], m[4][j], m[5][j]]);
        for i in 0..4 {
            cols[i][j] = col[i];
        }
    }
    let mut out = [[[0.0; LANES]; 4]; 4];
    for (o, c) in out.iter_mut().zip(cols.iter()) {
        *o = at_vec(c);
    }
    out
}

/// dM = A dY At over a lane batch.
#[inline(always)]
fn output_tile_transform_adjoint(y: &[[Lane; 4]; 4]) -> [[Lane; 6]; 6] {
    let mut cols = [[[0.0; LANES]; 4]; 6];
    for j in 0..4 {
        let col = a_vec(&[y[0][j], y[1][j], y[2][j], y[3][j]]);
        for i in 0..6 {
            cols[i][j] = col[i];
        }
    }
    let mut out = [[[0.0; LANES]; 6]; 6];
    for (o, c) in out.iter_mut().zip(cols.iter()) {
        *o = a_vec(c);
    }
    out
}

/// U = G g Gt for one kernel (scalar; amortized over the whole batch).
fn kernel_tile_transform(g: &[f64]) -> [[f64; 6]; 6] {
    debug_assert_eq!(g.len(), 9);
    fn g_vec(w: [f64; 3]) -> [f64; 6] {
        [
            0.25 * w[0],
            (-w[0] - w[1] - w[2]) / 6.0,
            (-w[0] + w[1] - w[2]) / 6.0,
            w[0] / 24.0 + w[1] / 12.0 + w[2] / 6.0,
            w[0] / 24.0 - w[1] / 12.0 + w[2] / 6.0,
            w[2],
        ]
    }
    let mut tmp = [[0.0; 3]; 6];
    for j in 0..3 {
        let col = g_vec([g[j], g[3 + j], g[6 + j]]);
        for i in 0..6 {
            tmp[i][j] = col[i];
        }
    }
    let mut out = [[0.0; 6]; 6];
    for (o, t) in out.iter_mut().zip(tmp.iter()) {
        *o = g_vec(*t);
    }
    out
}

/// dg = Gt dU G for one kernel.
fn kernel_tile_transform_adjoint(u: &[[f64; 6]; 6]) -> [f64; 9] {
    fn gt_vec(u: [f64; 6]) -> [f64; 3] {
        [
            0.25 * u[0] - u[1] / 6.0 - u[2] / 6.0 + u[3] / 24.0 + u[4] / 24.0,
            -u[1] / 6.0 + u[2] / 6.0 + u[3] / 12.0 - u[4] / 12.0,
            -u[1] / 6.0 - u[2] / 6.0 + u[3] / 6.0 + u[4] / 6.0 + u[5],
        ]
    }
    let mut tmp = [[0.0; 6]; 3];
    for j in 0..6 {
        let col = gt_vec([u[0][j], u[1][j], u[2][j], u[3][j], u[4][j], u[5][j]]);
        for i in 0..3 {
            tmp[i][j] = col[i];
        }
    }
    let mut out = [0.0; 9];
    for i in 0..3 {
        let row = gt_vec(tmp[i]);
        out[3 * i..3 * i + 3].copy_from_slice(&row);
    }
    out
}

struct Scratch {
    xhat: Vec<f64>,
    mhat: Vec<f64>,
    dm: Vec<f64>,
    vt: Vec<f64>,
    gemm: GemmScratch,
}

thread_local! {
    static SCRATCH: RefCell<Scratch> = RefCell::new(Scratch {
        xhat: Vec::new(),
        mhat: Vec::new(),
        dm: Vec::new(),
        vt: Vec::new(),
        gemm: GemmScratch::default(),
    });
}

/// Transformed weights, one (out_ch x in_ch) matrix per position, packed for
/// the GEMM; shared by every sample of a batch.
fn transform_weights(layer: &ConvLayer, transpose: bool) -> Vec<PackedA> {
    let (kc, cc) = (layer.out_ch, layer.in_ch);
    let (rows, cols) = if transpose { (cc, kc) } else { (kc, cc) };
    let mut planes = vec![0.0; POS * rows * cols];
    for k in 0..kc {
        for c in 0..cc {
            let u = kernel_tile_transform(&layer.weights[(k * cc + c) * 9..(k * cc + c) * 9 + 9]);
            let (r, q) = if transpose { (c, k) } else { (k, c) };
            for (pi, urow) in u.iter().enumerate() {
                for (pj, &uv) in urow.iter().enumerate() {
                    planes[((pi * ALPHA + pj) * rows + r) * cols + q] = uv;
                }
            }
        }
    }
    (0..POS)
        .map(|pos| PackedA::pack(&planes[pos * rows * cols..(pos + 1) * rows * cols], rows, cols))
        .collect()
}

/// Gathers up to LANES input windows (zero beyond the image) for tiles
/// `t0..t0+len` of one channel plane.
#[inline]
fn gather_input_lanes(
    plane: &[f64],
    h: usize,
    w: usize,
    tw: usize,
    t0: usize,
    len: usize,
) -> [[Lane; 6]; 6] {
    let mut d = [[[0.0; LANES]; 6]; 6];
    for lane in 0..len {
        let ti = t0 + lane;
        let y0 = (M * (ti / tw)) as isize - 1;
        let x0 = (M * (ti % tw)) as isize - 1;
        for i in 0..ALPHA {
            let iy = y0 + i as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let row = &plane[iy as usize * w..iy as usize * w + w];
            for j in 0..ALPHA {
                let ix = x0 + j as isize;
                if ix >= 0 && ix < w as isize {
                    d[i][j][lane] = row[ix as usize];
                }
            }
        }
    }
    d
}

/// Writes the transformed tile lanes into `dst[(pos * planes + pidx) * t + t0..]`.
#[inline]
fn store_lanes(dst: &mut [f64], v: &[[Lane; 6]; 6], plane_count: usize, pidx: usize, t: usize, t0: usize, len: usize) {
    for (pi, vrow) in v.iter().enumerate() {
        for (pj, lanes) in vrow.iter().enumerate() {
            let base = ((pi * ALPHA + pj) * plane_count + pidx) * t + t0;
            dst[base..base + len].copy_from_slice(&lanes[..len]);
        }
    }
}

/// Transforms every tile of one sample into `xhat` ([36][planes][t] layout).
fn transform_sample_input(
    sample: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    tw: usize,
    t: usize,
    xhat: &mut [f64],
) {
    for c in 0..cin {
        let plane = &sample[c * h * w..(c + 1) * h * w];
        let mut t0 = 0;
        while t0 < t {
            let len = LANES.min(t - t0);
            let d = gather_input_lanes(plane, h, w, tw, t0, len);
            let v = input_tile_transform(&d);
            store_lanes(xhat, &v, cin, c, t, t0, len);
            t0 += LANES;
        }
    }
}

pub(super) fn forward(layer: &ConvLayer, input: &Tensor, out: &mut Tensor) {
    let (_, cin, h, w) = input.dims();
    let kc = layer.out_ch;
    let (th, tw) = (h.div_ceil(M), w.div_ceil(M));
    let t = th * tw;
    let upacks = transform_weights(layer, false);

    out.data_mut()
        .par_chunks_mut(kc * h * w)
        .enumerate()
        .for_each(|(s, out_s)| {
            SCRATCH.with(|cell| {
                let ws = &mut *cell.borrow_mut();
                ws.xhat.resize(POS * cin * t, 0.0);
                ws.mhat.resize(POS * kc * t, 0.0);
                transform_sample_input(input.sample(s), cin, h, w, tw, t, &mut ws.xhat);
                ws.mhat.fill(0.0);
                for pos in 0..POS {
                    gemm(
                        &upacks[pos],
                        &ws.xhat[pos * cin * t..(pos + 1) * cin * t],
                        &mut ws.mhat[pos * kc * t..(pos + 1) * kc * t],
                        t,
                        &mut ws.gemm,
                    );
                }
                for k in 0..kc {
                    let bias = layer.bias[k];
                    let plane = &mut out_s[k * h * w..(k + 1) * h * w];
                    let mut t0 = 0;
                    while t0 < t {
                        let len = LANES.min(t - t0);
                        let mut m6 = [[[0.0; LANES]; 6]; 6];
                        for (pi, mrow) in m6.iter_mut().enumerate() {
                            for (pj, lanes) in mrow.iter_mut().enumerate() {
                                let base = ((pi * ALPHA + pj) * kc + k) * t + t0;
                                lanes[..len].copy_from_slice(&ws.mhat[base..base + len]);
                            }
                        }
                        let y = output_tile_transform(&m6);
                        for lane in 0..len {
                            let ti = t0 + lane;
                            let oy0 = M * (ti / tw);
                            let ox0 = M * (ti % tw);
                            for (i, yrow) in y.iter().enumerate() {
                                let oy = oy0 + i;
                                if oy >= h {
                                    break;
                                }
                                for (j, lanes) in yrow.iter().enumerate() {
                                    let ox = ox0 + j;
                                    if ox < w {
                                        plane[oy * w + ox] = lanes[lane] + bias;
                                    }
                                }
                            }
                        }
                        t0 += LANES;
                    }
                }
            });
        });
}

pub(super) fn backward(
    layer: &ConvLayer,
    grad_out: &Tensor,
    cached_input: &Tensor,
    grad_in: &mut Tensor,
    want_wgrads: bool,
) -> Option<ConvGrads> {
    let (_, cin, h, w) = cached_input.dims();
    let kc = layer.out_ch;
    let (th, tw) = (h.div_ceil(M), w.div_ceil(M));
    let t = th * tw;
    let utpacks = transform_weights(layer, true);

    let partials: Vec<Option<(Vec<f64>, Vec<f64>)>> = grad_in
        .data_mut()
        .par_chunks_mut(cin * h * w)
        .enumerate()
        .map(|(s, gin_s)| {
            SCRATCH.with(|cell| {
                let ws = &mut *cell.borrow_mut();
                ws.dm.resize(POS * kc * t, 0.0);
                ws.xhat.resize(POS * cin * t, 0.0);
                let gout_s = grad_out.sample(s);

                // dM = A dY At per output-channel tile
                for k in 0..kc {
                    let plane = &gout_s[k * h * w..(k + 1) * h * w];
                    let mut t0 = 0;
                    while t0 < t {
                        let len = LANES.min(t - t0);
                        let mut y4 = [[[0.0; LANES]; 4]; 4];
                        for lane in 0..len {
                            let ti = t0 + lane;
                            let oy0 = M * (ti / tw);
                            let ox0 = M * (ti % tw);
                            for (i, yrow) in y4.iter_mut().enumerate() {
                                let oy = oy0 + i;
                                if oy >= h {
                                    break;
                                }
                                for (j, lanes) in yrow.iter_mut().enumerate() {
                                    let ox = ox0 + j;
                                    if ox < w {
                                        lanes[lane] = plane[oy * w + ox];
                                    }
                                }
                            }
                        }
                        let dm = output_tile_transform_adjoint(&y4);
                        store_lanes(&mut ws.dm, &dm, kc, k, t, t0, len);
                        t0 += LANES;
                    }
                }

                // dV = Ut dM, then dX = B dV Bt scattered with overlap.
                ws.xhat.fill(0.0);
                for pos in 0..POS {
                    gemm(
                        &utpacks[pos],
                        &ws.dm[pos * kc * t..(pos + 1) * kc * t],
                        &mut ws.xhat[pos * cin * t..(pos + 1) * cin * t],
                        t,
                        &mut ws.gemm,
                    );
                }
                for c in 0..cin {
                    let plane = &mut gin_s[c * h * w..(c + 1) * h * w];
                    let mut t0 = 0;
                    while t0 < t {
                        let len = LANES.min(t - t0);
                        let mut v6 = [[[0.0; LANES]; 6]; 6];
                        for (pi, vrow) in v6.iter_mut().enumerate() {
                            for (pj, lanes) in vrow.iter_mut().enumerate() {
                                let base = ((pi * ALPHA + pj) * cin + c) * t + t0;
                                lanes[..len].copy_from_slice(&ws.xhat[base..base + len]);
                            }
                        }
                        let dd = input_tile_transform_adjoint(&v6);
                        // input windows of neighboring tiles overlap, so the
                        // scatter-add stays per-lane
                        for lane in 0..len {
                            let ti = t0 + lane;
                            let y0 = (M * (ti / tw)) as isize - 1;
                            let x0 = (M * (ti % tw)) as isize - 1;
                            for (i, drow) in dd.iter().enumerate() {
                                let iy = y0 + i as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let dst = &mut plane[iy as usize * w..iy as usize * w + w];
                                for (j, lanes) in drow.iter().enumerate() {
                                    let ix = x0 + j as isize;
                                    if ix >= 0 && ix < w as isize {
                                        dst[ix as usize] += lanes[lane];
                                    }
                                }
                            }
                        }
                        t0 += LANES;
                    }
                }

                if !want_wgrads {
                    return None;
                }

                // dU += dM V^t per position, accumulated in the transform
                // domain; the inverse kernel transform runs once per batch.
                ws.vt.resize(POS * t * cin, 0.0);
                let sample = cached_input.sample(s);
                for c in 0..cin {
                    let plane = &sample[c * h * w..(c + 1) * h * w];
                    let mut t0 = 0;
                    while t0 < t {
                        let len = LANES.min(t - t0);
                        let d = gather_input_lanes(plane, h, w, tw, t0, len);
                        let v = input_tile_transform(&d);
                        for (pi, vrow) in v.iter().enumerate() {
                            for (pj, lanes) in vrow.iter().enumerate() {
                                let base = (pi * ALPHA + pj) * t * cin + c;
                                for lane in 0..len {
                                    ws.vt[base + (t0 + lane) * cin] = lanes[lane];
                                }
                            }
                        }
                        t0 += LANES;
                    }
                }
                let mut du = vec![0.0; POS * kc * cin];
                for pos in 0..POS {
                    let dmpack = PackedA::pack(&ws.dm[pos * kc * t..(pos + 1) * kc * t], kc, t);
                    gemm(
                        &dmpack,
                        &ws.vt[pos * t * cin..(pos + 1) * t * cin],
                        &mut du[pos * kc * cin..(pos + 1) * kc * cin],
                        cin,
                        &mut ws.gemm,
                    );
                }
                let mut dbias = vec![0.0; kc];
                for (k, b) in dbias.iter_mut().enumerate() {
                    *b = gout_s[k * h * w..(k + 1) * h * w].iter().sum();
                }
                Some((du, dbias))
            })
        })
        .collect();

    if !want_wgrads {
        return None;
    }
    let mut du_total = vec![0.0; POS * kc * cin];
    let mut dbias_total = vec![0.0; kc];
    for (du, dbias) in partials.into_iter().flatten() {
        for (t, v) in du_total.iter_mut().zip(du.iter()) {
            *t += v;
        }
        for (t, v) in dbias_total.iter_mut().zip(dbias.iter()) {
            *t += v;
        }
    }
    let mut dweights = vec![0.0; kc * cin * 9];
    for k in 0..kc {
        for c in 0..cin {
            let mut u6 = [[0.0; 6]; 6];
            for (pi, urow) in u6.iter_mut().enumerate() {
                for (pj, uv) in urow.iter_mut().enumerate() {
                    *uv = du_total[((pi * ALPHA + pj) * kc + k) * cin + c];
                }
            }
            let dg = kernel_tile_transform_adjoint(&u6);
            dweights[(k * cin + c) * 9..(k * cin + c) * 9 + 9].copy_from_slice(&dg);
        }
    }
    Some(ConvGrads {
        weights: dweights,
        bias: dbias_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xorshift64;

    fn random_tensor(rng: &mut Xorshift64, n: usize, c: usize, h: usize, w: usize) -> Tensor {
        let data = (0..n * c * h * w).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        Tensor::from_vec(n, c, h, w, data).unwrap()
    }

    fn random_layer(rng: &mut Xorshift64, in_ch: usize, out_ch: usize) -> ConvLayer {
        let mut layer = ConvLayer::new(in_ch, out_ch, 1).unwrap();
        for v in layer.weights.iter_mut() {
            *v = rng.next_f64() - 0.5;
        }
        for v in layer.bias.iter_mut() {
            *v = rng.next_f64() - 0.5;
        }
        layer
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b.iter()).enumerate() {
            let scale = x.abs().max(y.abs()).max(1.0);
            assert!((x - y).abs() <= tol * scale, "{what}[{i}]: {x} vs {y}");
        }
    }

    /// Plain quadruple-loop reference convolution.
    fn direct_out(layer: &ConvLayer, input: &Tensor) -> Tensor {
        let (n, cin, h, w) = input.dims();
        let mut out = Tensor::zeros(n, layer.out_ch, h, w);
        for s in 0..n {
            for k in 0..layer.out_ch {
                for oy in 0..h {
                    for ox in 0..w {
                        let mut acc = layer.bias[k];
                        for c in 0..cin {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = oy as isize + ky as isize - 1;
                                    let ix = ox as isize + kx as isize - 1;
                                    if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += layer.weights[((k * cin + c) * 3 + ky) * 3 + kx]
                                        * input.at(s, c, iy as usize, ix as usize);
                                }
                            }
                        }
                        out.set(s, k, oy, ox, acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_direct_reference() {
        let mut rng = Xorshift64::new(21);
        for &(n, c, k, h, w) in &[
            (1usize, 1usize, 1usize, 8usize, 8usize),
            (2, 3, 5, 12, 20),
            (1, 4, 2, 9, 11), // off-grid sizes exercise edge tiles
            (1, 2, 2, 6, 40),
        ] {
            let layer = random_layer(&mut rng, c, k);
            let input = random_tensor(&mut rng, n, c, h, w);
            let mut fast = Tensor::zeros(n, k, h, w);
            forward(&layer, &input, &mut fast);
            let direct = direct_out(&layer, &input);
            assert_close(fast.data(), direct.data(), 1e-12, "forward");
        }
    }

    #[test]
    fn backward_matches_direct_path() {
        let mut rng = Xorshift64::new(22);
        for &(n, c, k, h, w) in &[(1usize, 2usize, 3usize, 8usize, 8usize), (2, 3, 2, 10, 13)] {
            let layer = random_layer(&mut rng, c, k);
            let input = random_tensor(&mut rng, n, c, h, w);
            let grad_out = random_tensor(&mut rng, n, k, h, w);

            let mut gin_w = Tensor::zeros(n, c, h, w);
            let grads_w = backward(&layer, &grad_out, &input, &mut gin_w, true).unwrap();

            let mut gin_ref = Tensor::zeros(n, c, h, w);
            let mut dw_ref = vec![0.0; k * c * 9];
            let mut db_ref = vec![0.0; k];
            for s in 0..n {
                for ko in 0..k {
                    for oy in 0..h {
                        for ox in 0..w {
                            let g = grad_out.at(s, ko, oy, ox);
                            db_ref[ko] += g;
                            for ci in 0..c {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let iy = oy as isize + ky as isize - 1;
                                        let ix = ox as isize + kx as isize - 1;
                                        if iy < 0
                                            || iy >= h as isize
                                            || ix < 0
                                            || ix >= w as isize
                                        {
                                            continue;
                                        }
                                        let (iy, ix) = (iy as usize, ix as usize);
                                        dw_ref[((ko * c + ci) * 3 + ky) * 3 + kx] +=
                                            g * input.at(s, ci, iy, ix);
                                        let cur = gin_ref.at(s, ci, iy, ix);
                                        gin_ref.set(
                                            s,
                                            ci,
                                            iy,
                                            ix,
                                            cur + g * layer.weights
                                                [((ko * c + ci) * 3 + ky) * 3 + kx],
                                        );
                                    }
                                }
                            }
                        }
                    }
                }
            }
            assert_close(gin_w.data(), gin_ref.data(), 1e-11, "grad_input");
            assert_close(&grads_w.weights, &dw_ref, 1e-11, "grad_weights");
            assert_close(&grads_w.bias, &db_ref, 1e-11, "grad_bias");
        }
    }
}
