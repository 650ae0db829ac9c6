//! Coded-stream container and its on-disk format.
//!
//! Layout: magic "CPRC", version u8, channels u8, width u32 LE, height u32
//! LE, qf u8, payload bit length u64 LE, payload bytes zero-padded to a byte
//! boundary. Version 1 marks the block-transform codec, version 2 the
//! lossless identity codec. Width and height are the dimensions the decoder
//! should produce — for compact-representation streams that is the original
//! image, whose half-resolution payload grid the pipeline derives.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CPRC";
pub const VERSION_BLOCK: u8 = 1;
pub const VERSION_IDENTITY: u8 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitstreamHeader {
    pub version: u8,
    pub channels: u8,
    pub width: u32,
    pub height: u32,
    pub qf: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    pub header: BitstreamHeader,
    pub payload: Vec<u8>,
    /// Exact number of meaningful payload bits.
    pub bit_count: u64,
}

impl Bitstream {
    /// Fixed header size: magic + version + channels + dims + qf + bit count.
    pub const HEADER_BITS: u64 = 8 * 23;

    pub fn new(header: BitstreamHeader, payload: Vec<u8>, bit_count: u64) -> Result<Self> {
        if bit_count > 8 * payload.len() as u64 {
            return Err(Error::Format(format!(
                "bit count {bit_count} exceeds payload of {} bytes",
                payload.len()
            )));
        }
        Ok(Bitstream {
            header,
            payload,
            bit_count,
        })
    }

    /// Header plus payload bits; the numerator of bits-per-pixel.
    pub fn total_bits(&self) -> u64 {
        Self::HEADER_BITS + self.bit_count
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(23 + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(self.header.version);
        out.push(self.header.channels);
        out.extend_from_slice(&self.header.width.to_le_bytes());
        out.extend_from_slice(&self.header.height.to_le_bytes());
        out.push(self.header.qf);
        out.extend_from_slice(&self.bit_count.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 23 {
            return Err(Error::Format(format!(
                "stream of {} bytes is shorter than the header",
                bytes.len()
            )));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::Format("bad magic, not a CPRC stream".to_string()));
        }
        let header = BitstreamHeader {
            version: bytes[4],
            channels: bytes[5],
            width: u32::from_le_bytes(bytes[6..10].try_into().unwrap()),
            height: u32::from_le_bytes(bytes[10..14].try_into().unwrap()),
            qf: bytes[14],
        };
        let bit_count = u64::from_le_bytes(bytes[15..23].try_into().unwrap());
        let payload = bytes[23..].to_vec();
        if bit_count > 8 * payload.len() as u64 {
            return Err(Error::Format(format!(
                "declared {bit_count} payload bits but only {} bytes follow",
                payload.len()
            )));
        }
        Bitstream::new(header, payload, bit_count)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Ingest {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Coded bits (header included) per pixel of the original image.
pub fn bits_per_pixel(bs: &Bitstream, original_w: usize, original_h: usize) -> Result<f64> {
    if original_w == 0 || original_h == 0 {
        return Err(Error::param("bits_per_pixel on a zero-area image".to_string()));
    }
    Ok(bs.total_bits() as f64 / (original_w * original_h) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Bitstream {
        Bitstream::new(
            BitstreamHeader {
                version: VERSION_BLOCK,
                channels: 1,
                width: 640,
                height: 480,
                qf: 20,
            },
            vec![0xde, 0xad, 0xbe],
            21,
        )
        .unwrap()
    }

    #[test]
    fn header_round_trips_losslessly() {
        let bs = sample();
        let back = Bitstream::from_bytes(&bs.to_bytes()).unwrap();
        assert_eq!(back, bs);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Bitstream::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn truncated_stream_is_rejected() {
        let bytes = sample().to_bytes();
        assert!(Bitstream::from_bytes(&bytes[..10]).is_err());
        // header intact but payload shorter than the declared bit count
        assert!(Bitstream::from_bytes(&bytes[..24]).is_err());
    }

    #[test]
    fn bpp_arithmetic() {
        // 65536 total bits (header included) over 512x512 pixels = 0.25 bpp
        let bs = Bitstream::new(
            BitstreamHeader {
                version: VERSION_BLOCK,
                channels: 1,
                width: 512,
                height: 512,
                qf: 50,
            },
            vec![0; (65536 - Bitstream::HEADER_BITS as usize) / 8],
            65536 - Bitstream::HEADER_BITS,
        )
        .unwrap();
        assert_eq!(bits_per_pixel(&bs, 512, 512).unwrap(), 0.25);
        // against a half-resolution denominator the same stream reads 4x
        assert_eq!(bits_per_pixel(&bs, 256, 256).unwrap(), 1.0);
    }

    #[test]
    fn zero_area_is_a_parameter_error() {
        assert!(bits_per_pixel(&sample(), 0, 5).is_err());
    }
}
