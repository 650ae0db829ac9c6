//! Quality-factor scaled quantization tables.

use crate::error::{Error, Result};

/// JPEG Annex K luminance table, natural (row-major) order.
const BASE_LUMA: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// ZIGZAG[i] = natural index of the i-th coefficient in zigzag order.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, //
    17, 24, 32, 25, 18, 11, 4, 5, //
    12, 19, 26, 33, 40, 48, 41, 34, //
    27, 20, 13, 6, 7, 14, 21, 28, //
    35, 42, 49, 56, 57, 50, 43, 36, //
    29, 22, 15, 23, 30, 37, 44, 51, //
    58, 59, 52, 45, 38, 31, 39, 46, //
    53, 60, 61, 54, 47, 55, 62, 63,
];

/// 64 step sizes in [1, 255], zigzag-ordered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantTable {
    entries: [u8; 64],
}

impl QuantTable {
    /// Scales the base table for a quality factor in 1..=100:
    /// scale = 5000/qf below 50, else 200 - 2*qf; each entry is
    /// round(base*scale/100) clamped into [1, 255].
    pub fn from_quality(qf: u8) -> Result<Self> {
        if !(1..=100).contains(&qf) {
            return Err(Error::param(format!("quality factor {qf} outside 1..=100")));
        }
        let scale: u32 = if qf < 50 {
            5000 / qf as u32
        } else {
            200 - 2 * qf as u32
        };
        let mut entries = [0u8; 64];
        for (zi, e) in entries.iter_mut().enumerate() {
            let base = BASE_LUMA[ZIGZAG[zi]] as u32;
            let scaled = (base * scale + 50) / 100;
            *e = scaled.clamp(1, 255) as u8;
        }
        Ok(QuantTable { entries })
    }

    /// Step size for the zigzag position `zi`.
    #[inline]
    pub fn entry(&self, zi: usize) -> u8 {
        self.entries[zi]
    }

    pub fn entries(&self) -> &[u8; 64] {
        &self.entries
    }
}

/// Divides natural-order coefficients by the table, rounding ties away from
/// zero; the result is zigzag-ordered.
pub fn quantize(coeffs: &[f64; 64], table: &QuantTable) -> [i32; 64] {
    let mut q = [0i32; 64];
    for (zi, qv) in q.iter_mut().enumerate() {
        *qv = (coeffs[ZIGZAG[zi]] / table.entry(zi) as f64).round() as i32;
    }
    q
}

/// Inverse of `quantize` up to the rounding loss: natural-order coefficients.
pub fn dequantize(q: &[i32; 64], table: &QuantTable) -> [f64; 64] {
    let mut coeffs = [0.0; 64];
    for (zi, &qv) in q.iter().enumerate() {
        coeffs[ZIGZAG[zi]] = qv as f64 * table.entry(zi) as f64;
    }
    coeffs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qf50_is_the_base_table() {
        let t = QuantTable::from_quality(50).unwrap();
        for zi in 0..64 {
            assert_eq!(t.entry(zi) as u16, BASE_LUMA[ZIGZAG[zi]]);
        }
    }

    #[test]
    fn qf100_is_all_ones() {
        let t = QuantTable::from_quality(100).unwrap();
        assert!(t.entries().iter().all(|&e| e == 1));
    }

    #[test]
    fn qf5_scales_dc_to_160() {
        // scale = 1000, base 16 -> round(16*1000/100) = 160
        let t = QuantTable::from_quality(5).unwrap();
        assert_eq!(t.entry(0), 160);
    }

    #[test]
    fn out_of_range_qf_is_rejected() {
        assert!(QuantTable::from_quality(0).is_err());
        assert!(QuantTable::from_quality(101).is_err());
    }

    #[test]
    fn zero_coefficient_stays_zero() {
        let t = QuantTable::from_quality(35).unwrap();
        let q = quantize(&[0.0; 64], &t);
        assert!(q.iter().all(|&v| v == 0));
    }

    #[test]
    fn quantize_dequantize_on_exact_multiple() {
        let t = QuantTable::from_quality(5).unwrap();
        let mut coeffs = [0.0; 64];
        coeffs[0] = 160.0; // dc entry is 160 at qf 5
        let q = quantize(&coeffs, &t);
        assert_eq!(q[0], 1);
        let back = dequantize(&q, &t);
        assert_eq!(back[0], 160.0);
    }

    #[test]
    fn small_coefficient_is_destroyed() {
        // 79.9 / 160 rounds to 0: the information loss the training loop
        // routes around.
        let t = QuantTable::from_quality(5).unwrap();
        let mut coeffs = [0.0; 64];
        coeffs[0] = 79.9;
        assert_eq!(quantize(&coeffs, &t)[0], 0);
    }

    #[test]
    fn ties_round_away_from_zero() {
        let t = QuantTable::from_quality(100).unwrap(); // all entries 1
        let mut coeffs = [0.0; 64];
        coeffs[ZIGZAG[1]] = 0.5;
        coeffs[ZIGZAG[2]] = -0.5;
        let q = quantize(&coeffs, &t);
        assert_eq!(q[1], 1);
        assert_eq!(q[2], -1);
    }

    #[test]
    fn zigzag_is_a_permutation() {
        let mut seen = [false; 64];
        for &z in ZIGZAG.iter() {
            assert!(!seen[z]);
            seen[z] = true;
        }
    }
}
