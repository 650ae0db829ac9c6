//! The in-loop image codec: an 8x8 block-transform coder with a quality
//! factor, plus a lossless identity codec behind the same interface.

mod bitio;
mod bitstream;
mod dct;
mod entropy;
mod image;
mod quant;

pub use bitstream::{bits_per_pixel, Bitstream, BitstreamHeader, VERSION_BLOCK, VERSION_IDENTITY};
pub use dct::{forward_dct8, inverse_dct8};
pub use image::{read_pgm, write_pgm, Image};
pub use quant::{dequantize, quantize, QuantTable, ZIGZAG};

use bitio::{BitReader, BitWriter};
use entropy::{decode_block, encode_block};

use crate::error::{Error, Result};

/// A lossy (or lossless) image coder with a rate knob.
pub trait Codec {
    fn encode(&self, img: &Image, qf: u8) -> Result<Bitstream>;
    fn decode(&self, bs: &Bitstream) -> Result<Image>;
}

/// DCT + quantization + run-level entropy coding on 8x8 blocks.
#[derive(Debug, Clone, Copy, Default)]
pub struct BlockCodec;

/// Stores samples verbatim; decode(encode(x)) == x.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl Codec for BlockCodec {
    fn encode(&self, img: &Image, qf: u8) -> Result<Bitstream> {
        let (payload, bit_count) = encode_planes(img, qf)?;
        Bitstream::new(
            BitstreamHeader {
                version: VERSION_BLOCK,
                channels: img.channels() as u8,
                width: img.width() as u32,
                height: img.height() as u32,
                qf,
            },
            payload,
            bit_count,
        )
    }

    fn decode(&self, bs: &Bitstream) -> Result<Image> {
        if bs.header.version != VERSION_BLOCK {
            return Err(Error::Format(format!(
                "stream version {} is not a block-codec stream",
                bs.header.version
            )));
        }
        decode_planes(
            &bs.payload,
            bs.bit_count,
            bs.header.width as usize,
            bs.header.height as usize,
            bs.header.channels as usize,
            bs.header.qf,
        )
    }
}

impl Codec for IdentityCodec {
    fn encode(&self, img: &Image, qf: u8) -> Result<Bitstream> {
        let payload = img.samples().to_vec();
        let bit_count = 8 * payload.len() as u64;
        Bitstream::new(
            BitstreamHeader {
                version: VERSION_IDENTITY,
                channels: img.channels() as u8,
                width: img.width() as u32,
                height: img.height() as u32,
                qf,
            },
            payload,
            bit_count,
        )
    }

    fn decode(&self, bs: &Bitstream) -> Result<Image> {
        if bs.header.version != VERSION_IDENTITY {
            return Err(Error::Format(format!(
                "stream version {} is not an identity-codec stream",
                bs.header.version
            )));
        }
        let (w, h, c) = (
            bs.header.width as usize,
            bs.header.height as usize,
            bs.header.channels as usize,
        );
        if bs.bit_count != 8 * (w * h * c) as u64 {
            return Err(Error::Decode {
                offset: bs.bit_count,
                msg: format!(
                    "identity payload holds {} bits, expected {}",
                    bs.bit_count,
                    8 * w * h * c
                ),
            });
        }
        Image::from_samples(w, h, c, bs.payload[..w * h * c].to_vec())
    }
}

/// Block-codec compression of `img` at quality `qf`.
pub fn encode_image(img: &Image, qf: u8) -> Result<Bitstream> {
    BlockCodec.encode(img, qf)
}

/// Inverse of `encode_image` up to quantization loss.
pub fn decode_image(bs: &Bitstream) -> Result<Image> {
    BlockCodec.decode(bs)
}

/// Core block loop shared by `encode_image` and the compact pipeline (which
/// stores different header dimensions than it codes).
pub(crate) fn encode_planes(img: &Image, qf: u8) -> Result<(Vec<u8>, u64)> {
    let table = QuantTable::from_quality(qf)?;
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 {
        return Err(Error::param("cannot encode an empty image".to_string()));
    }
    let (bw, bh) = (w.div_ceil(8), h.div_ceil(8));
    let mut writer = BitWriter::new();
    let mut block = [0.0f64; 64];
    for c in 0..img.channels() {
        let plane = img.plane(c);
        for by in 0..bh {
            for bx in 0..bw {
                // edge replication pads the partial border blocks
                for i in 0..8 {
                    let y = (8 * by + i).min(h - 1);
                    for j in 0..8 {
                        let x = (8 * bx + j).min(w - 1);
                        block[8 * i + j] = plane[y * w + x] as f64 - 128.0;
                    }
                }
                let coeffs = forward_dct8(&block);
                let q = quantize(&coeffs, &table);
                encode_block(&q, &mut writer);
            }
        }
    }
    Ok(writer.finish())
}

pub(crate) fn decode_planes(
    payload: &[u8],
    bit_count: u64,
    w: usize,
    h: usize,
    channels: usize,
    qf: u8,
) -> Result<Image> {
    let table = QuantTable::from_quality(qf)?;
    if w == 0 || h == 0 || channels == 0 {
        return Err(Error::Format("empty image dimensions in header".to_string()));
    }
    let (bw, bh) = (w.div_ceil(8), h.div_ceil(8));
    let mut reader = BitReader::new(payload, bit_count)?;
    let mut img = Image::new(w, h, channels);
    for c in 0..channels {
        for by in 0..bh {
            for bx in 0..bw {
                let q = decode_block(&mut reader)?;
                let coeffs = dequantize(&q, &table);
                let block = inverse_dct8(&coeffs);
                for i in 0..8 {
                    let y = 8 * by + i;
                    if y >= h {
                        break;
                    }
                    for j in 0..8 {
                        let x = 8 * bx + j;
                        if x >= w {
                            break;
                        }
                        let v = (block[8 * i + j] + 128.0).round().clamp(0.0, 255.0);
                        img.set(c, y, x, v as u8);
                    }
                }
            }
        }
    }
    if !reader.at_end() {
        return Err(Error::Decode {
            offset: reader.position(),
            msg: format!(
                "{} trailing payload bits after the last block",
                bit_count - reader.position()
            ),
        });
    }
    Ok(img)
}
