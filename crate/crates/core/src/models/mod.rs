//! The two fixed architectures and everything that stitches them to the
//! codec: bicubic resampling, the deployment pipelines, and checkpoints.

mod bicubic;
mod checkpoint;
mod pipeline;

pub use bicubic::{bicubic_resize, bicubic_resize_backward, ResizeDir};
pub use checkpoint::{load_model, save_model};
pub use pipeline::{
    compact_dims, image_to_tensor, pipeline_compress, pipeline_decompress, quantize_compact,
    reconstruct_codec_only, reconstruct_compact_bicubic, reconstruct_postprocess, sample_to_image,
    tensor_to_image,
};

use crate::error::{Error, Result};
use crate::rng::Xorshift64;
use crate::tensor::{
    adam_step, he_init, relu_backward, relu_forward, AdamState, BatchNormLayer, BnCache,
    BnGrads, ConvGrads, ConvLayer, Tensor,
};

pub const FILTERS: usize = 64;
pub const RECCNN_WEIGHT_LAYERS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    ComCnn = 1,
    RecCnn = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(ConvLayer),
    BatchNorm(BatchNormLayer),
    Relu,
}

/// Per-layer parameter gradients, aligned with `Model::layers`.
#[derive(Debug, Clone)]
pub enum LayerGrads {
    Conv(ConvGrads),
    BatchNorm(BnGrads),
    None,
}

/// One layer's stash for the backward pass.
#[derive(Debug)]
struct LayerCache {
    input: Tensor,
    bn: Option<BnCache>,
}

/// Activations captured by a cached forward pass.
#[derive(Debug)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    mode: Mode,
}

/// Ordered layer stack with optional residual output and Adam state.
#[derive(Debug, Clone)]
pub struct Model {
    pub kind: ModelKind,
    pub channels: usize,
    pub layers: Vec<Layer>,
    /// When set, the network output is input + predicted residual.
    pub residual: bool,
    pub(crate) adam: Option<Vec<AdamState>>,
}

impl Model {
    /// 3 weight layers: conv+relu, stride-2 conv+relu, conv. Halves the
    /// spatial resolution.
    pub fn comcnn(channels: usize, rng: &mut Xorshift64) -> Result<Self> {
        let mut layers = Vec::new();
        layers.push(Layer::Conv(init_conv(channels, FILTERS, 1, rng)?));
        layers.push(Layer::Relu);
        layers.push(Layer::Conv(init_conv(FILTERS, FILTERS, 2, rng)?));
        layers.push(Layer::Relu);
        layers.push(Layer::Conv(init_conv(FILTERS, channels, 1, rng)?));
        Ok(Model {
            kind: ModelKind::ComCnn,
            channels,
            layers,
            residual: false,
            adam: None,
        })
    }

    /// 20 weight layers: conv+relu, 18x (conv+batchnorm+relu), conv, with a
    /// residual connection from input to output.
    pub fn reccnn(channels: usize, rng: &mut Xorshift64) -> Result<Self> {
        let mut layers = Vec::new();
        layers.push(Layer::Conv(init_conv(channels, FILTERS, 1, rng)?));
        layers.push(Layer::Relu);
        for _ in 0..(RECCNN_WEIGHT_LAYERS - 2) {
            layers.push(Layer::Conv(init_conv(FILTERS, FILTERS, 1, rng)?));
            layers.push(Layer::BatchNorm(BatchNormLayer::new(FILTERS)));
            layers.push(Layer::Relu);
        }
        layers.push(Layer::Conv(init_conv(FILTERS, channels, 1, rng)?));
        Ok(Model {
            kind: ModelKind::RecCnn,
            channels,
            layers,
            residual: true,
            adam: None,
        })
    }

    pub fn weight_layer_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, Layer::Conv(_)))
            .count()
    }

    /// Plain stack output (for residual models this is the residual, not
    /// the reconstruction).
    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv(c) => c.forward(&cur)?,
                Layer::BatchNorm(bn) => bn.forward_infer(&cur)?,
                Layer::Relu => relu_forward(&cur),
            };
        }
        Ok(cur)
    }

    /// Inference forward that also stashes what a frozen backward needs.
    pub fn forward_infer_cached(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let out = match layer {
                Layer::Conv(c) => c.forward(&cur)?,
                Layer::BatchNorm(bn) => bn.forward_infer(&cur)?,
                Layer::Relu => relu_forward(&cur),
            };
            caches.push(LayerCache {
                input: cur,
                bn: None,
            });
            cur = out;
        }
        Ok((
            cur,
            ForwardCache {
                layers: caches,
                mode: Mode::Infer,
            },
        ))
    }

    /// Train-mode forward: batch statistics in the norm layers (updating
    /// their running estimates) and a full cache for `backward`.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &mut self.layers {
            let (out, bn_cache) = match layer {
                Layer::Conv(c) => (c.forward(&cur)?, None),
                Layer::BatchNorm(bn) => {
                    let (out, cache) = bn.forward_train(&cur)?;
                    (out, Some(cache))
                }
                Layer::Relu => (relu_forward(&cur), None),
            };
            caches.push(LayerCache {
                input: cur,
                bn: bn_cache,
            });
            cur = out;
        }
        Ok((
            cur,
            ForwardCache {
                layers: caches,
                mode: Mode::Train,
            },
        ))
    }

    /// Full backward through a train-mode cache: input gradient plus
    /// per-layer parameter gradients.
    pub fn backward(
        &self,
        grad_out: &Tensor,
        cache: &ForwardCache,
    ) -> Result<(Tensor, Vec<LayerGrads>)> {
        if cache.mode != Mode::Train {
            return Err(Error::Usage(
                "parameter gradients need a train-mode forward cache".to_string(),
            ));
        }
        self.backward_impl(grad_out, cache, true)
            .map(|(g, grads)| (g, grads.expect("gradients requested")))
    }

    /// Input gradient only, parameters and statistics frozen. Works on an
    /// inference cache, where the norm layers are fixed affine maps.
    pub fn backward_input_frozen(
        &self,
        grad_out: &Tensor,
        cache: &ForwardCache,
    ) -> Result<Tensor> {
        self.backward_impl(grad_out, cache, false).map(|(g, _)| g)
    }

    fn backward_impl(
        &self,
        grad_out: &Tensor,
        cache: &ForwardCache,
        want_param_grads: bool,
    ) -> Result<(Tensor, Option<Vec<LayerGrads>>)> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::Usage(
                "forward cache does not match this model".to_string(),
            ));
        }
        let mut grad = grad_out.clone();
        let mut grads_rev = Vec::with_capacity(self.layers.len());
        for (layer, lc) in self.layers.iter().zip(cache.layers.iter()).rev() {
            match layer {
                Layer::Conv(c) => {
                    if want_param_grads {
                        let (gin, g) = c.backward(&grad, &lc.input)?;
                        grad = gin;
                        grads_rev.push(LayerGrads::Conv(g));
                    } else {
                        grad = c.backward_input(&grad, &lc.input)?;
                        grads_rev.push(LayerGrads::None);
                    }
                }
                Layer::BatchNorm(bn) => match (&lc.bn, want_param_grads) {
                    (Some(bn_cache), true) => {
                        let (gin, g) = bn.backward_train(&grad, &lc.input, bn_cache)?;
                        grad = gin;
                        grads_rev.push(LayerGrads::BatchNorm(g));
                    }
                    (Some(bn_cache), false) => {
                        let (gin, _) = bn.backward_train(&grad, &lc.input, bn_cache)?;
                        grad = gin;
                        grads_rev.push(LayerGrads::None);
                    }
                    (None, false) => {
                        grad = bn.backward_infer_input(&grad)?;
                        grads_rev.push(LayerGrads::None);
                    }
                    (None, true) => {
                        return Err(Error::Usage(
                            "train-mode batchnorm cache missing".to_string(),
                        ));
                    }
                },
                Layer::Relu => {
                    grad = relu_backward(&grad, &lc.input)?;
                    grads_rev.push(LayerGrads::None);
                }
            }
        }
        grads_rev.reverse();
        Ok((grad, want_param_grads.then_some(grads_rev)))
    }

    /// Allocates fresh Adam state for every trainable buffer.
    pub fn init_adam(&mut self) {
        let mut states = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    states.push(AdamState::new(c.weights.len()));
                    states.push(AdamState::new(c.bias.len()));
                }
                Layer::BatchNorm(bn) => {
                    states.push(AdamState::new(bn.gamma.len()));
                    states.push(AdamState::new(bn.beta.len()));
                }
                Layer::Relu => {}
            }
        }
        self.adam = Some(states);
    }

    /// One Adam update of every trainable buffer at the given learning rate.
    pub fn apply_grads(&mut self, grads: &[LayerGrads], lr: f64) -> Result<()> {
        if grads.len() != self.layers.len() {
            return Err(Error::Usage(format!(
                "got {} layer gradients for {} layers",
                grads.len(),
                self.layers.len()
            )));
        }
        if self.adam.is_none() {
            self.init_adam();
        }
        let states = self.adam.as_mut().unwrap();
        let mut si = 0;
        for (layer, grad) in self.layers.iter_mut().zip(grads.iter()) {
            match (layer, grad) {
                (Layer::Conv(c), LayerGrads::Conv(g)) => {
                    states[si].alpha = lr;
                    adam_step(&mut c.weights, &g.weights, &mut states[si])?;
                    states[si + 1].alpha = lr;
                    adam_step(&mut c.bias, &g.bias, &mut states[si + 1])?;
                    si += 2;
                }
                (Layer::BatchNorm(bn), LayerGrads::BatchNorm(g)) => {
                    states[si].alpha = lr;
                    adam_step(&mut bn.gamma, &g.gamma, &mut states[si])?;
                    states[si + 1].alpha = lr;
                    adam_step(&mut bn.beta, &g.beta, &mut states[si + 1])?;
                    si += 2;
                }
                (Layer::Relu, LayerGrads::None) => {}
                (Layer::Conv(_), LayerGrads::None) | (Layer::BatchNorm(_), LayerGrads::None) => {
                    // frozen layer in this step; skip its optimizer slots
                    si += 2;
                }
                _ => {
                    return Err(Error::Usage(
                        "layer gradients misaligned with model layers".to_string(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Zeroes every weight and bias; norm scales stay at one. Mostly for
    /// tests of the residual-identity contract.
    pub fn zero_params(&mut self) {
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    c.weights.fill(0.0);
                    c.bias.fill(0.0);
                }
                Layer::BatchNorm(bn) => {
                    bn.gamma.fill(1.0);
                    bn.beta.fill(0.0);
                }
                Layer::Relu => {}
            }
        }
    }

    /// FNV-1a over every parameter and running statistic; two models with
    /// the same digest have bit-identical state.
    pub fn params_digest(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |xs: &[f64]| {
            for x in xs {
                for b in x.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x1000_0000_01b3);
                }
            }
        };
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    eat(&c.weights);
                    eat(&c.bias);
                }
                Layer::BatchNorm(bn) => {
                    eat(&bn.gamma);
                    eat(&bn.beta);
                    eat(&bn.running_mean);
                    eat(&bn.running_var);
                }
                Layer::Relu => {}
            }
        }
        h
    }
}

fn init_conv(in_ch: usize, out_ch: usize, stride: usize, rng: &mut Xorshift64) -> Result<ConvLayer> {
    let mut c = ConvLayer::new(in_ch, out_ch, stride)?;
    he_init(&mut c, rng);
    Ok(c)
}

/// Residual forward: returns (residual, reconstruction = input + residual).
pub fn reccnn_forward(model: &Model, u: &Tensor, mode: Mode) -> Result<(Tensor, Tensor)> {
    if model.kind != ModelKind::RecCnn {
        return Err(Error::Usage("reccnn_forward needs a RecCNN model".to_string()));
    }
    let residual = match mode {
        Mode::Infer => model.forward_infer(u)?,
        Mode::Train => {
            return Err(Error::Usage(
                "training passes use forward_train for the cache".to_string(),
            ))
        }
    };
    let mut recon = residual.clone();
    for (r, &uv) in recon.data_mut().iter_mut().zip(u.data()) {
        *r += uv;
    }
    Ok((residual, recon))
}

/// Half-resolution compact representation of a [0,1] input.
pub fn comcnn_forward(model: &Model, x: &Tensor) -> Result<Tensor> {
    if model.kind != ModelKind::ComCnn {
        return Err(Error::Usage("comcnn_forward needs a ComCNN model".to_string()));
    }
    model.forward_infer(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> Xorshift64 {
        Xorshift64::new(42)
    }

    #[test]
    fn comcnn_has_three_weight_layers_and_halves() {
        let model = Model::comcnn(1, &mut rng()).unwrap();
        assert_eq!(model.weight_layer_count(), 3);
        let x = Tensor::zeros(1, 1, 40, 40);
        let y = model.forward_infer(&x).unwrap();
        assert_eq!(y.dims(), (1, 1, 20, 20));
    }

    #[test]
    fn comcnn_ceils_odd_input() {
        let model = Model::comcnn(1, &mut rng()).unwrap();
        let y = model.forward_infer(&Tensor::zeros(1, 1, 41, 41)).unwrap();
        assert_eq!(y.dims(), (1, 1, 21, 21));
    }

    #[test]
    fn zeroed_comcnn_outputs_zero() {
        let mut model = Model::comcnn(1, &mut rng()).unwrap();
        model.zero_params();
        let mut x = Tensor::zeros(1, 1, 12, 12);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = (i % 7) as f64 * 0.1;
        }
        let y = model.forward_infer(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reccnn_has_twenty_weight_layers_and_preserves_dims() {
        let model = Model::reccnn(1, &mut rng()).unwrap();
        assert_eq!(model.weight_layer_count(), 20);
        assert!(model.residual);
        let x = Tensor::zeros(1, 1, 16, 24);
        let y = model.forward_infer(&x).unwrap();
        assert_eq!(y.dims(), (1, 1, 16, 24));
    }

    #[test]
    fn reccnn_batchnorm_only_on_middle_layers() {
        let model = Model::reccnn(1, &mut rng()).unwrap();
        let bn_count = model
            .layers
            .iter()
            .filter(|l| matches!(l, Layer::BatchNorm(_)))
            .count();
        assert_eq!(bn_count, 18);
        assert!(matches!(model.layers[0], Layer::Conv(_)));
        assert!(matches!(model.layers.last(), Some(Layer::Conv(_))));
    }

    #[test]
    fn residual_forward_adds_input() {
        let mut r = rng();
        let model = Model::reccnn(1, &mut r).unwrap();
        let mut u = Tensor::zeros(1, 1, 16, 16);
        for v in u.data_mut().iter_mut() {
            *v = r.next_f64();
        }
        let (res, recon) = reccnn_forward(&model, &u, Mode::Infer).unwrap();
        for ((&rc, &rs), &uv) in recon.data().iter().zip(res.data()).zip(u.data()) {
            assert_eq!(rc, rs + uv);
        }
    }

    #[test]
    fn zero_weight_reccnn_is_the_identity() {
        let mut model = Model::reccnn(1, &mut rng()).unwrap();
        model.zero_params();
        let mut u = Tensor::zeros(1, 1, 16, 16);
        for (i, v) in u.data_mut().iter_mut().enumerate() {
            *v = (i % 11) as f64 / 11.0;
        }
        let (res, recon) = reccnn_forward(&model, &u, Mode::Infer).unwrap();
        assert!(res.data().iter().all(|&v| v == 0.0));
        assert_eq!(recon.data(), u.data());
    }

    #[test]
    fn train_forward_then_backward_yields_aligned_grads() {
        let mut r = rng();
        let mut model = Model::reccnn(1, &mut r).unwrap();
        let mut x = Tensor::zeros(2, 1, 8, 8);
        for v in x.data_mut().iter_mut() {
            *v = r.next_f64();
        }
        let (out, cache) = model.forward_train(&x).unwrap();
        let (gin, grads) = model.backward(&out, &cache).unwrap();
        assert_eq!(gin.dims(), x.dims());
        assert_eq!(grads.len(), model.layers.len());
        let conv_grads = grads.iter().filter(|g| matches!(g, LayerGrads::Conv(_))).count();
        assert_eq!(conv_grads, 20);
    }

    #[test]
    fn frozen_backward_rejects_no_usage_issues_and_matches_dims() {
        let mut r = rng();
        let model = Model::reccnn(1, &mut r).unwrap();
        let mut x = Tensor::zeros(1, 1, 8, 8);
        for v in x.data_mut().iter_mut() {
            *v = r.next_f64();
        }
        let (out, cache) = model.forward_infer_cached(&x).unwrap();
        let gin = model.backward_input_frozen(&out, &cache).unwrap();
        assert_eq!(gin.dims(), x.dims());
    }

    #[test]
    fn param_grads_require_train_cache() {
        let mut r = rng();
        let model = Model::reccnn(1, &mut r).unwrap();
        let x = Tensor::zeros(1, 1, 8, 8);
        let (out, cache) = model.forward_infer_cached(&x).unwrap();
        assert!(matches!(model.backward(&out, &cache), Err(Error::Usage(_))));
    }

    #[test]
    fn apply_grads_changes_digest_deterministically() {
        let mut r = rng();
        let build = || {
            let mut rr = Xorshift64::new(9);
            Model::comcnn(1, &mut rr).unwrap()
        };
        let mut m1 = build();
        let mut m2 = build();
        assert_eq!(m1.params_digest(), m2.params_digest());
        let mut x = Tensor::zeros(2, 1, 10, 10);
        for v in x.data_mut().iter_mut() {
            *v = r.next_f64();
        }
        for m in [&mut m1, &mut m2] {
            let (out, cache) = m.forward_train(&x).unwrap();
            let (_, grads) = m.backward(&out, &cache).unwrap();
            m.apply_grads(&grads, 0.001).unwrap();
        }
        assert_eq!(m1.params_digest(), m2.params_digest());
        assert_ne!(m1.params_digest(), build().params_digest());
    }
}
