//! Model checkpoints.
//!
//! Layout: magic "CPRM", version u8, model kind u8 (1 = ComCNN, 2 = RecCNN),
//! channel count u8, then one record per layer: layer kind u8 (1 = conv
//! stride 1, 2 = conv stride 2, 3 = batchnorm, 4 = relu), dims as four u32
//! LE, then the raw little-endian f64 buffers — conv: weights then bias;
//! batchnorm: gamma, beta, running mean, running variance. Adam state is
//! not persisted.

use std::fs;
use std::path::Path;

use super::{Layer, Model, ModelKind};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormLayer, ConvLayer};

const MAGIC: [u8; 4] = *b"CPRM";
const VERSION: u8 = 1;

const LK_CONV_S1: u8 = 1;
const LK_CONV_S2: u8 = 2;
const LK_BATCHNORM: u8 = 3;
const LK_RELU: u8 = 4;

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(model.kind as u8);
    out.push(model.channels as u8);
    for layer in &model.layers {
        match layer {
            Layer::Conv(c) => {
                out.push(if c.stride == 1 { LK_CONV_S1 } else { LK_CONV_S2 });
                for d in [c.out_ch as u32, c.in_ch as u32, 3, 3] {
                    out.extend_from_slice(&d.to_le_bytes());
                }
                write_f64s(&mut out, &c.weights);
                write_f64s(&mut out, &c.bias);
            }
            Layer::BatchNorm(bn) => {
                out.push(LK_BATCHNORM);
                for d in [bn.channels() as u32, 0, 0, 0] {
                    out.extend_from_slice(&d.to_le_bytes());
                }
                write_f64s(&mut out, &bn.gamma);
                write_f64s(&mut out, &bn.beta);
                write_f64s(&mut out, &bn.running_mean);
                write_f64s(&mut out, &bn.running_var);
            }
            Layer::Relu => {
                out.push(LK_RELU);
                out.extend_from_slice(&[0u8; 16]);
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loads a checkpoint, requiring it to hold the expected model kind and a
/// structurally valid architecture for that kind.
pub fn load_model(path: &Path, expected: ModelKind) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::Ingest {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let mut r = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format("bad magic, not a CPRM checkpoint".to_string()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let kind = match r.u8()? {
        1 => ModelKind::ComCnn,
        2 => ModelKind::RecCnn,
        k => return Err(Error::Format(format!("unknown model kind {k}"))),
    };
    if kind != expected {
        return Err(Error::Format(format!(
            "checkpoint holds a {kind:?} model, expected {expected:?}"
        )));
    }
    let channels = r.u8()? as usize;
    let mut layers = Vec::new();
    while !r.done() {
        let lk = r.u8()?;
        let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
        match lk {
            LK_CONV_S1 | LK_CONV_S2 => {
                let (out_ch, in_ch) = (dims[0] as usize, dims[1] as usize);
                if dims[2] != 3 || dims[3] != 3 {
                    return Err(Error::Format(format!(
                        "unsupported kernel size {}x{}",
                        dims[2], dims[3]
                    )));
                }
                let mut c = ConvLayer::new(in_ch, out_ch, if lk == LK_CONV_S1 { 1 } else { 2 })?;
                r.f64s(&mut c.weights)?;
                r.f64s(&mut c.bias)?;
                layers.push(Layer::Conv(c));
            }
            LK_BATCHNORM => {
                let ch = dims[0] as usize;
                let mut bn = BatchNormLayer::new(ch);
                r.f64s(&mut bn.gamma)?;
                r.f64s(&mut bn.beta)?;
                r.f64s(&mut bn.running_mean)?;
                r.f64s(&mut bn.running_var)?;
                layers.push(Layer::BatchNorm(bn));
            }
            LK_RELU => layers.push(Layer::Relu),
            k => return Err(Error::Format(format!("unknown layer kind {k}"))),
        }
    }
    let model = Model {
        kind,
        channels,
        layers,
        residual: kind == ModelKind::RecCnn,
        adam: None,
    };
    validate_architecture(&model)?;
    Ok(model)
}

fn validate_architecture(model: &Model) -> Result<()> {
    let weight_layers = model.weight_layer_count();
    let expected = match model.kind {
        ModelKind::ComCnn => 3,
        ModelKind::RecCnn => super::RECCNN_WEIGHT_LAYERS,
    };
    if weight_layers != expected {
        return Err(Error::Format(format!(
            "{:?} checkpoint has {weight_layers} weight layers, expected {expected}",
            model.kind
        )));
    }
    for layer in &model.layers {
        if let Layer::Conv(c) = layer {
            if c.weights.len() != c.out_ch * c.in_ch * 9 || c.bias.len() != c.out_ch {
                return Err(Error::Format("conv buffer sizes are inconsistent".to_string()));
            }
        }
    }
    Ok(())
}

fn write_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, dst: &mut [f64]) -> Result<()> {
        let raw = self.take(8 * dst.len())?;
        for (d, c) in dst.iter_mut().zip(raw.chunks_exact(8)) {
            *d = f64::from_le_bytes(c.try_into().unwrap());
        }
        Ok(())
    }
}
