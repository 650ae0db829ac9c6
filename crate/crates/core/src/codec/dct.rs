//! Orthonormal 8x8 DCT (type II forward, type III inverse).

use std::sync::OnceLock;

/// basis[k][n] = c(k) cos((2n+1) k pi / 16), c(0)=sqrt(1/8), c(k)=1/2.
fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (k, row) in b.iter_mut().enumerate() {
            let c = if k == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
            for (n, v) in row.iter_mut().enumerate() {
                *v = c * ((2 * n + 1) as f64 * k as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        b
    })
}

/// coeffs = C block C^t
pub fn forward_dct8(block: &[f64; 64]) -> [f64; 64] {
    apply(block, false)
}

/// block = C^t coeffs C
pub fn inverse_dct8(coeffs: &[f64; 64]) -> [f64; 64] {
    apply(coeffs, true)
}

fn apply(x: &[f64; 64], inverse: bool) -> [f64; 64] {
    let c = basis();
    // rows
    let mut tmp = [0.0; 64];
    for i in 0..8 {
        for k in 0..8 {
            let mut s = 0.0;
            for n in 0..8 {
                let w = if inverse { c[n][k] } else { c[k][n] };
                s += w * x[i * 8 + n];
            }
            tmp[i * 8 + k] = s;
        }
    }
    // columns
    let mut out = [0.0; 64];
    for j in 0..8 {
        for k in 0..8 {
            let mut s = 0.0;
            for n in 0..8 {
                let w = if inverse { c[n][k] } else { c[k][n] };
                s += w * tmp[n * 8 + j];
            }
            out[k * 8 + j] = s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xorshift64;

    #[test]
    fn constant_block_is_dc_only() {
        let v = 3.25;
        let coeffs = forward_dct8(&[v; 64]);
        assert!((coeffs[0] - 8.0 * v).abs() < 1e-12, "dc {}", coeffs[0]);
        for (i, &c) in coeffs.iter().enumerate().skip(1) {
            assert!(c.abs() < 1e-12, "ac[{i}] = {c}");
        }
    }

    #[test]
    fn zero_block_stays_zero() {
        assert!(forward_dct8(&[0.0; 64]).iter().all(|&c| c == 0.0));
    }

    #[test]
    fn round_trip_below_1e10() {
        let mut rng = Xorshift64::new(8);
        for _ in 0..100 {
            let mut block = [0.0; 64];
            for b in block.iter_mut() {
                *b = rng.next_f64() * 255.0 - 128.0;
            }
            let back = inverse_dct8(&forward_dct8(&block));
            for (a, b) in block.iter().zip(back.iter()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn orthonormal_energy_preservation() {
        let mut rng = Xorshift64::new(9);
        let mut block = [0.0; 64];
        for b in block.iter_mut() {
            *b = rng.next_f64() * 100.0;
        }
        let coeffs = forward_dct8(&block);
        let e_in: f64 = block.iter().map(|v| v * v).sum();
        let e_out: f64 = coeffs.iter().map(|v| v * v).sum();
        assert!((e_in.sqrt() - e_out.sqrt()).abs() < 1e-9);
    }
}
