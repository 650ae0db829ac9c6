//! MSB-first bit stream with exponential-Golomb codes.

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit_count: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        BitWriter::default()
    }

    #[allow(dead_code)] // handy in tests; production callers use finish()
    pub fn bit_count(&self) -> u64 {
        self.bit_count
    }

    #[inline]
    pub fn write_bit(&mut self, bit: bool) {
        let offset = (self.bit_count % 8) as u8;
        if offset == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 0x80 >> offset;
        }
        self.bit_count += 1;
    }

    /// Writes the low `count` bits of `value`, most significant first.
    pub fn write_bits(&mut self, value: u64, count: u32) {
        for i in (0..count).rev() {
            self.write_bit((value >> i) & 1 == 1);
        }
    }

    /// Unsigned exponential-Golomb (order 0): k zeros then (n+1) in k+1 bits.
    pub fn write_ue(&mut self, n: u64) {
        let v = n + 1;
        let bits = 64 - v.leading_zeros();
        self.write_bits(0, bits - 1);
        self.write_bits(v, bits);
    }

    /// Signed exponential-Golomb: positive l -> 2l-1, negative l -> -2l.
    pub fn write_se(&mut self, l: i64) {
        let n = if l > 0 { (2 * l - 1) as u64 } else { (-2 * l) as u64 };
        self.write_ue(n);
    }

    /// Payload zero-padded to a byte boundary, plus the exact bit count.
    pub fn finish(self) -> (Vec<u8>, u64) {
        (self.bytes, self.bit_count)
    }
}

pub struct BitReader<'a> {
    bytes: &'a [u8],
    bit_len: u64,
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8], bit_len: u64) -> Result<Self> {
        if bit_len > 8 * bytes.len() as u64 {
            return Err(Error::Decode {
                offset: 0,
                msg: format!("bit length {bit_len} exceeds payload of {} bytes", bytes.len()),
            });
        }
        Ok(BitReader {
            bytes,
            bit_len,
            pos: 0,
        })
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.bit_len
    }

    #[inline]
    pub fn read_bit(&mut self) -> Result<bool> {
        if self.pos >= self.bit_len {
            return Err(Error::Decode {
                offset: self.pos,
                msg: "unexpected end of stream".to_string(),
            });
        }
        let byte = self.bytes[(self.pos / 8) as usize];
        let bit = byte & (0x80 >> (self.pos % 8)) != 0;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, count: u32) -> Result<u64> {
        let mut v = 0u64;
        for _ in 0..count {
            v = (v << 1) | self.read_bit()? as u64;
        }
        Ok(v)
    }

    pub fn read_ue(&mut self) -> Result<u64> {
        let mut zeros = 0u32;
        while !self.read_bit()? {
            zeros += 1;
            if zeros > 63 {
                return Err(Error::Decode {
                    offset: self.pos,
                    msg: "exp-Golomb prefix too long".to_string(),
                });
            }
        }
        // leading 1 already consumed
        let rest = self.read_bits(zeros)?;
        Ok(((1u64 << zeros) | rest) - 1)
    }

    pub fn read_se(&mut self) -> Result<i64> {
        let n = self.read_ue()?;
        Ok(if n == 0 {
            0
        } else if n % 2 == 1 {
            ((n + 1) / 2) as i64
        } else {
            -((n / 2) as i64)
        })
    }
}
