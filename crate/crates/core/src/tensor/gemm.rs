//! Packed f64 matrix multiply used by the convolution paths.
//!
//! Accumulation order is fixed by the blocking alone, so results are
//! bit-identical no matter how callers parallelize around it.

pub(crate) const MR: usize = 8;
pub(crate) const NR: usize = 16;

/// A-matrix packed into MR-tall, k-major panels so the kernel reads it
/// contiguously. Reused across calls that share the same left operand
/// (e.g. one weight matrix against every sample in a batch).
#[derive(Debug, Clone, Default)]
pub(crate) struct PackedA {
    panels: Vec<f64>,
    m: usize,
    k: usize,
}

impl PackedA {
    pub fn pack(a: &[f64], m: usize, k: usize) -> Self {
        debug_assert_eq!(a.len(), m * k);
        let mtiles = m.div_ceil(MR);
        let mut panels = vec![0.0; mtiles * MR * k];
        for t in 0..mtiles {
            let i0 = t * MR;
            let rows = MR.min(m - i0);
            let base = t * MR * k;
            for p in 0..k {
                for r in 0..rows {
                    panels[base + p * MR + r] = a[(i0 + r) * k + p];
                }
            }
        }
        PackedA { panels, m, k }
    }
}

/// Scratch for the B-panel; hoisted out so hot loops do not reallocate.
#[derive(Debug, Clone, Default)]
pub(crate) struct GemmScratch {
    packb: Vec<f64>,
}

/// C[m x n] += A[m x k] * B[k x n], all row-major.
pub(crate) fn gemm(
    a: &PackedA,
    b: &[f64],
    c: &mut [f64],
    n: usize,
    scratch: &mut GemmScratch,
) {
    let (m, k) = (a.m, a.k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let packb = &mut scratch.packb;
    packb.resize(k * NR, 0.0);
    let mtiles = m.div_ceil(MR);
    let mut j = 0;
    while j < n {
        let nr = NR.min(n - j);
        for p in 0..k {
            let dst = &mut packb[p * NR..(p + 1) * NR];
            if nr == NR {
                dst.copy_from_slice(&b[p * n + j..p * n + j + NR]);
            } else {
                dst[..nr].copy_from_slice(&b[p * n + j..p * n + j + nr]);
                dst[nr..].fill(0.0);
            }
        }
        let (pb, _) = packb.as_chunks::<NR>();
        for t in 0..mtiles {
            let i0 = t * MR;
            let rows = MR.min(m - i0);
            let (pa, _) = a.panels[t * MR * k..t * MR * k + k * MR].as_chunks::<MR>();
            let acc = kernel(pa, pb);
            for r in 0..rows {
                let crow = &mut c[(i0 + r) * n + j..(i0 + r) * n + j + nr];
                for (cv, &av) in crow.iter_mut().zip(acc[r].iter()) {
                    *cv += av;
                }
            }
        }
        j += NR;
    }
}

#[inline(always)]
fn kernel(pa: &[[f64; MR]], pb: &[[f64; NR]]) -> [[f64; NR]; MR] {
    let mut acc = [[0.0f64; NR]; MR];
    for (arow, brow) in pa.iter().zip(pb.iter()) {
        for r in 0..MR {
            let av = arow[r];
            for q in 0..NR {
                acc[r][q] = av.mul_add(brow[q], acc[r][q]);
            }
        }
    }
    acc
}

/// Reference triple loop for tests.
#[cfg(test)]
pub(crate) fn gemm_naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s = a[i * k + p].mul_add(b[p * n + j], s);
            }
            c[i * n + j] += s;
        }
    }
}
