//! Deployment pipelines: network -> codec on the way down, codec ->
//! upscale -> network on the way back.

use super::{bicubic_resize, comcnn_forward, reccnn_forward, Mode, Model, ModelKind, ResizeDir};
use crate::codec::{
    decode_image, encode_image, Bitstream, BitstreamHeader, Image, VERSION_BLOCK,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dimensions of the compact representation for an original image.
pub fn compact_dims(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(2), height.div_ceil(2))
}

/// Samples scaled to [0,1] as a (1, c, h, w) tensor.
pub fn image_to_tensor(img: &Image) -> Tensor {
    let data = img.samples().iter().map(|&s| s as f64 / 255.0).collect();
    Tensor::from_vec(1, img.channels(), img.height(), img.width(), data)
        .expect("image buffer length matches its dims")
}

/// One sample of a [0,1] tensor back to 8 bits: clamp, scale by 255, round
/// half away from zero.
pub fn sample_to_image(t: &Tensor, n: usize) -> Image {
    let (_, c, h, w) = t.dims();
    let samples = t
        .sample(n)
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Image::from_samples(w, h, c, samples).expect("sample buffer length matches dims")
}

/// Tensor of batch 1 to an image (see `sample_to_image`).
pub fn tensor_to_image(t: &Tensor) -> Result<Image> {
    if t.batch() != 1 {
        return Err(Error::Usage(format!(
            "tensor_to_image expects batch 1, got {}",
            t.batch()
        )));
    }
    Ok(sample_to_image(t, 0))
}

/// Discretizes a compact representation for the 8-bit codec.
pub fn quantize_compact(compact: &Tensor) -> Result<Image> {
    tensor_to_image(compact)
}

/// normalize -> ComCNN -> 8-bit quantize -> block codec. The header carries
/// the ORIGINAL dimensions; the payload covers the half-resolution grid.
pub fn pipeline_compress(x: &Image, comcnn: &Model, qf: u8) -> Result<Bitstream> {
    if comcnn.kind != ModelKind::ComCnn {
        return Err(Error::Usage("pipeline_compress needs a ComCNN model".to_string()));
    }
    if comcnn.channels != x.channels() {
        return Err(Error::shape(format!(
            "model expects {} channels, image has {}",
            comcnn.channels,
            x.channels()
        )));
    }
    let compact = comcnn_forward(comcnn, &image_to_tensor(x))?;
    let compact_img = quantize_compact(&compact)?;
    let (payload, bit_count) = crate::codec::encode_planes(&compact_img, qf)?;
    Bitstream::new(
        BitstreamHeader {
            version: VERSION_BLOCK,
            channels: x.channels() as u8,
            width: x.width() as u32,
            height: x.height() as u32,
            qf,
        },
        payload,
        bit_count,
    )
}

/// decode at the derived compact dims -> bicubic x2 -> crop to header dims
/// -> RecCNN -> 8 bits.
pub fn pipeline_decompress(bs: &Bitstream, reccnn: &Model) -> Result<Image> {
    if reccnn.kind != ModelKind::RecCnn {
        return Err(Error::Usage("pipeline_decompress needs a RecCNN model".to_string()));
    }
    if bs.header.version != VERSION_BLOCK {
        return Err(Error::Format(format!(
            "stream version {} is not a block-codec stream",
            bs.header.version
        )));
    }
    let (w, h, c) = (
        bs.header.width as usize,
        bs.header.height as usize,
        bs.header.channels as usize,
    );
    let (cw, ch) = compact_dims(w, h);
    let compact = crate::codec::decode_planes(&bs.payload, bs.bit_count, cw, ch, c, bs.header.qf)?;
    let upscaled = upscale_to(&image_to_tensor(&compact), h, w);
    let (_, recon) = reccnn_forward(reccnn, &upscaled, Mode::Infer)?;
    tensor_to_image(&recon)
}

/// Bicubic x2 followed by the crop to the exact target size (odd originals
/// upscale one pixel long).
pub fn upscale_to(t: &Tensor, target_h: usize, target_w: usize) -> Tensor {
    let up = bicubic_resize(t, ResizeDir::Up2);
    crop(&up, target_h, target_w)
}

fn crop(t: &Tensor, target_h: usize, target_w: usize) -> Tensor {
    let (n, c, h, w) = t.dims();
    if h == target_h && w == target_w {
        return t.clone();
    }
    assert!(target_h <= h && target_w <= w, "crop cannot grow");
    let mut out = Tensor::zeros(n, c, target_h, target_w);
    for s in 0..n {
        for ci in 0..c {
            let src = t.plane(s, ci);
            let base = (s * c + ci) * target_h * target_w;
            for y in 0..target_h {
                out.data_mut()[base + y * target_w..base + (y + 1) * target_w]
                    .copy_from_slice(&src[y * w..y * w + target_w]);
            }
        }
    }
    out
}

/// Plain codec round trip, no networks.
pub fn reconstruct_codec_only(x: &Image, qf: u8) -> Result<Image> {
    decode_image(&encode_image(x, qf)?)
}

/// Compact path without RecCNN: ComCNN -> codec -> bicubic upscale.
pub fn reconstruct_compact_bicubic(x: &Image, comcnn: &Model, qf: u8) -> Result<Image> {
    let bs = pipeline_compress(x, comcnn, qf)?;
    let (cw, ch) = compact_dims(x.width(), x.height());
    let compact = crate::codec::decode_planes(
        &bs.payload,
        bs.bit_count,
        cw,
        ch,
        x.channels(),
        qf,
    )?;
    let up = upscale_to(&image_to_tensor(&compact), x.height(), x.width());
    tensor_to_image(&up)
}

/// RecCNN as a post-processor on the direct codec output (no ComCNN).
pub fn reconstruct_postprocess(x: &Image, reccnn: &Model, qf: u8) -> Result<Image> {
    let decoded = reconstruct_codec_only(x, qf)?;
    let u = image_to_tensor(&decoded);
    let (_, recon) = reccnn_forward(reccnn, &u, Mode::Infer)?;
    tensor_to_image(&recon)
}
