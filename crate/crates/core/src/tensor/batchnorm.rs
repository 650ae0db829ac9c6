//! Per-channel batch normalization.
//!
//! Train mode normalizes by biased batch statistics and folds them into the
//! running estimates as `running <- momentum*running + (1-momentum)*batch`.
//! Inference uses the running statistics only, which makes the layer a fixed
//! affine map — its input gradient then needs no cache at all.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

/// Batch statistics captured by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    mean: Vec<f64>,
    var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BatchNormLayer {
    pub fn new(channels: usize) -> Self {
        BatchNormLayer {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
            momentum: 0.9,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.channels() != self.channels() {
            return Err(Error::shape(format!(
                "batchnorm expects {} channels, got {}",
                self.channels(),
                input.channels()
            )));
        }
        Ok(())
    }

    /// Normalizes by batch statistics and updates the running estimates.
    pub fn forward_train(&mut self, input: &Tensor) -> Result<(Tensor, BnCache)> {
        self.check_input(input)?;
        let (n, c, h, w) = input.dims();
        let m = n * h * w;
        if m < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batchnorm train mode needs at least 2 values per channel, got {m}"
            )));
        }
        let mf = m as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for s in 0..n {
            for (ci, mu) in mean.iter_mut().enumerate() {
                *mu += input.plane(s, ci).iter().sum::<f64>();
            }
        }
        for mu in mean.iter_mut() {
            *mu /= mf;
        }
        for s in 0..n {
            for ci in 0..c {
                let mu = mean[ci];
                var[ci] += input
                    .plane(s, ci)
                    .iter()
                    .map(|&x| (x - mu) * (x - mu))
                    .sum::<f64>();
            }
        }
        for v in var.iter_mut() {
            *v /= mf;
        }

        let mut out = Tensor::zeros(n, c, h, w);
        for s in 0..n {
            for ci in 0..c {
                let scale = self.gamma[ci] / (var[ci] + self.eps).sqrt();
                let shift = self.beta[ci] - mean[ci] * scale;
                let src = input.plane(s, ci);
                let base = (s * c + ci) * h * w;
                for (o, &x) in out.data_mut()[base..base + h * w].iter_mut().zip(src) {
                    *o = scale.mul_add(x, shift);
                }
            }
        }
        for ci in 0..c {
            self.running_mean[ci] = self.momentum * self.running_mean[ci]
                + (1.0 - self.momentum) * mean[ci];
            self.running_var[ci] =
                self.momentum * self.running_var[ci] + (1.0 - self.momentum) * var[ci];
        }
        Ok((out, BnCache { mean, var }))
    }

    /// Normalizes by the running statistics; never mutates the layer.
    pub fn forward_infer(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let (n, c, h, w) = input.dims();
        let mut out = Tensor::zeros(n, c, h, w);
        for s in 0..n {
            for ci in 0..c {
                let scale = self.gamma[ci] / (self.running_var[ci] + self.eps).sqrt();
                let shift = self.beta[ci] - self.running_mean[ci] * scale;
                let src = input.plane(s, ci);
                let base = (s * c + ci) * h * w;
                for (o, &x) in out.data_mut()[base..base + h * w].iter_mut().zip(src) {
                    *o = scale.mul_add(x, shift);
                }
            }
        }
        Ok(out)
    }

    /// Exact train-mode gradients for input, gamma and beta.
    pub fn backward_train(
        &self,
        grad_out: &Tensor,
        cached_input: &Tensor,
        cache: &BnCache,
    ) -> Result<(Tensor, BnGrads)> {
        grad_out.same_dims(cached_input)?;
        self.check_input(cached_input)?;
        let (n, c, h, w) = cached_input.dims();
        let mf = (n * h * w) as f64;

        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for s in 0..n {
            for ci in 0..c {
                let inv_std = 1.0 / (cache.var[ci] + self.eps).sqrt();
                let mu = cache.mean[ci];
                for (&g, &x) in grad_out.plane(s, ci).iter().zip(cached_input.plane(s, ci)) {
                    dbeta[ci] += g;
                    dgamma[ci] += g * (x - mu) * inv_std;
                }
            }
        }

        // dx = gamma/std * (dy - mean(dy) - xhat * mean(dy*xhat))
        let mut grad_in = Tensor::zeros(n, c, h, w);
        for s in 0..n {
            for ci in 0..c {
                let inv_std = 1.0 / (cache.var[ci] + self.eps).sqrt();
                let mu = cache.mean[ci];
                let k = self.gamma[ci] * inv_std;
                let mean_dy = dbeta[ci] / mf;
                let mean_dy_xhat = dgamma[ci] / mf;
                let base = (s * c + ci) * h * w;
                for ((o, &g), &x) in grad_in.data_mut()[base..base + h * w]
                    .iter_mut()
                    .zip(grad_out.plane(s, ci))
                    .zip(cached_input.plane(s, ci))
                {
                    let xhat = (x - mu) * inv_std;
                    *o = k * (g - mean_dy - xhat * mean_dy_xhat);
                }
            }
        }
        Ok((
            grad_in,
            BnGrads {
                gamma: dgamma,
                beta: dbeta,
            },
        ))
    }

    /// Input gradient through the inference-mode affine map (frozen layer).
    pub fn backward_infer_input(&self, grad_out: &Tensor) -> Result<Tensor> {
        self.check_input(grad_out)?;
        let (n, c, h, w) = grad_out.dims();
        let mut grad_in = Tensor::zeros(n, c, h, w);
        for s in 0..n {
            for ci in 0..c {
                let scale = self.gamma[ci] / (self.running_var[ci] + self.eps).sqrt();
                let base = (s * c + ci) * h * w;
                for (o, &g) in grad_in.data_mut()[base..base + h * w]
                    .iter_mut()
                    .zip(grad_out.plane(s, ci))
                {
                    *o = g * scale;
                }
            }
        }
        Ok(grad_in)
    }
}
