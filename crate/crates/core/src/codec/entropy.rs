//! Run-level coding of quantized 8x8 blocks.
//!
//! Per nonzero coefficient in zigzag order the stream carries ue(run+1)
//! followed by se(level); ue(0) terminates the block. The shifted run symbol
//! keeps the terminator at a single bit, so an all-zero block costs exactly
//! one bit and zeroing any coefficient never lengthens the stream.

use super::bitio::{BitReader, BitWriter};
use crate::error::{Error, Result};

pub fn encode_block(q: &[i32; 64], w: &mut BitWriter) {
    let mut run = 0u64;
    for &level in q.iter() {
        if level == 0 {
            run += 1;
        } else {
            w.write_ue(run + 1);
            w.write_se(level as i64);
            run = 0;
        }
    }
    w.write_ue(0); // end of block
}

pub fn decode_block(r: &mut BitReader) -> Result<[i32; 64]> {
    let mut q = [0i32; 64];
    let mut pos = 0usize;
    loop {
        let sym = r.read_ue()?;
        if sym == 0 {
            return Ok(q);
        }
        pos += (sym - 1) as usize;
        if pos >= 64 {
            return Err(Error::Decode {
                offset: r.position(),
                msg: format!("zero run overflows block (position {pos})"),
            });
        }
        let level = r.read_se()?;
        if level == 0 || level < i32::MIN as i64 || level > i32::MAX as i64 {
            return Err(Error::Decode {
                offset: r.position(),
                msg: format!("invalid coefficient level {level}"),
            });
        }
        q[pos] = level as i32;
        pos += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xorshift64;

    fn round_trip(q: &[i32; 64]) -> [i32; 64] {
        let mut w = BitWriter::new();
        encode_block(q, &mut w);
        let (bytes, bits) = w.finish();
        let mut r = BitReader::new(&bytes, bits).unwrap();
        let out = decode_block(&mut r).unwrap();
        assert!(r.at_end());
        out
    }

    fn coded_bits(q: &[i32; 64]) -> u64 {
        let mut w = BitWriter::new();
        encode_block(q, &mut w);
        w.bit_count()
    }

    #[test]
    fn all_zero_block_is_one_bit() {
        let q = [0i32; 64];
        assert_eq!(coded_bits(&q), 1);
        assert_eq!(round_trip(&q), q);
    }

    #[test]
    fn random_blocks_round_trip_exactly() {
        let mut rng = Xorshift64::new(77);
        for _ in 0..500 {
            let mut q = [0i32; 64];
            for v in q.iter_mut() {
                // sparse-ish blocks with occasional large levels
                if rng.next_below(3) == 0 {
                    *v = rng.next_below(4001) as i32 - 2000;
                }
            }
            assert_eq!(round_trip(&q), q);
        }
    }

    #[test]
    fn dense_nonzero_block_round_trips() {
        let mut q = [0i32; 64];
        for (i, v) in q.iter_mut().enumerate() {
            *v = if i % 2 == 0 { i as i32 + 1 } else { -(i as i32) - 1 };
        }
        assert_eq!(round_trip(&q), q);
    }

    #[test]
    fn sparsification_never_costs_bits() {
        let mut rng = Xorshift64::new(78);
        for _ in 0..200 {
            let mut q = [0i32; 64];
            for v in q.iter_mut() {
                if rng.next_below(2) == 0 {
                    *v = rng.next_below(201) as i32 - 100;
                }
            }
            let mut bits = coded_bits(&q);
            let mut sparser = q;
            // zero the nonzeros one by one in random order
            loop {
                let nz: Vec<usize> =
                    (0..64).filter(|&i| sparser[i] != 0).collect();
                if nz.is_empty() {
                    break;
                }
                sparser[nz[rng.next_below(nz.len())]] = 0;
                let b = coded_bits(&sparser);
                assert!(b <= bits, "sparser block coded in {b} > {bits} bits");
                bits = b;
            }
        }
    }

    #[test]
    fn run_overflow_is_a_decode_error() {
        let mut w = BitWriter::new();
        w.write_ue(66); // run of 65 zeros: past the block
        w.write_se(1);
        w.write_ue(0);
        let (bytes, bits) = w.finish();
        let mut r = BitReader::new(&bytes, bits).unwrap();
        assert!(matches!(decode_block(&mut r), Err(Error::Decode { .. })));
    }

    #[test]
    fn truncated_block_is_a_decode_error() {
        let mut q = [0i32; 64];
        q[10] = 42;
        let mut w = BitWriter::new();
        encode_block(&q, &mut w);
        let (bytes, bits) = w.finish();
        let mut r = BitReader::new(&bytes, bits - 2).unwrap();
        assert!(decode_block(&mut r).is_err());
    }
}
