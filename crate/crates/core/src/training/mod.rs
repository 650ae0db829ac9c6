//! The alternating training loop.
//!
//! Each outer iteration first rebuilds the decoded compact inputs with the
//! real codec (so RecCNN trains on exactly what it will see at deployment),
//! fits RecCNN on residuals, then fits ComCNN through the frozen RecCNN
//! with the codec dropped from the path — quantization rounding never sits
//! on a gradient.

mod config;
mod data;
mod report;

pub use config::TrainConfig;
pub use data::{
    count_patches, extract_patches, load_images, patch_positions, PatchSet, Provenance,
    AUGMENTATIONS, PATCH_SIZE, PATCH_STRIDE,
};
pub use report::{EpochRecord, OuterRecord, TrainReport};

// The checkpoint byte format lives with the model definitions.
pub use crate::models::{load_model, save_model};

use std::path::Path;
use std::time::Instant;

use crate::codec::{bits_per_pixel, Image};
use crate::error::{Error, Result};
use crate::metrics;
use crate::models::{
    bicubic_resize, bicubic_resize_backward, pipeline_compress, pipeline_decompress,
    sample_to_image, Model, ModelKind, ResizeDir,
};
use crate::rng::Xorshift64;
use crate::tensor::{mse_loss, Tensor};

/// Geometric interpolation from `start` to `end` over `total_epochs`.
pub fn lr_schedule(epoch: usize, total_epochs: usize, start: f64, end: f64) -> f64 {
    if total_epochs <= 1 || epoch == 0 {
        return start;
    }
    let frac = epoch as f64 / (total_epochs - 1) as f64;
    start * (end / start).powf(frac)
}

/// Per-epoch numbers returned by the inner loops.
#[derive(Debug, Clone)]
pub struct EpochStat {
    pub lr: f64,
    pub mean_loss: f64,
    pub wall_secs: f64,
}

fn gather_batch(t: &Tensor, idx: &[usize]) -> Tensor {
    let (_, c, h, w) = t.dims();
    let chw = c * h * w;
    let mut data = Vec::with_capacity(idx.len() * chw);
    for &i in idx {
        data.extend_from_slice(t.sample(i));
    }
    Tensor::from_vec(idx.len(), c, h, w, data).expect("gathered dims are consistent")
}

fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::shape("tensor difference dims differ".to_string()));
    }
    let mut out = a.clone();
    for (o, &bv) in out.data_mut().iter_mut().zip(b.data()) {
        *o -= bv;
    }
    Ok(out)
}

fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::shape("tensor sum dims differ".to_string()));
    }
    let mut out = a.clone();
    for (o, &bv) in out.data_mut().iter_mut().zip(b.data()) {
        *o += bv;
    }
    Ok(out)
}

/// Runs the codec leg: ComCNN -> 8-bit quantize -> encode/decode at `qf` ->
/// bicubic x2 back up. The result pairs with the originals for RecCNN
/// training.
pub fn build_decoded_inputs(comcnn: &Model, patches: &Tensor, qf: u8) -> Result<Tensor> {
    let (n, c, h, w) = patches.dims();
    if n == 0 {
        return Err(Error::param("no patches to encode".to_string()));
    }
    let (ch2, cw2) = (h.div_ceil(2), w.div_ceil(2));
    let mut decoded = Tensor::zeros(n, c, ch2, cw2);
    let chunk = 32;
    let mut s0 = 0;
    while s0 < n {
        let len = chunk.min(n - s0);
        let idx: Vec<usize> = (s0..s0 + len).collect();
        let compact = comcnn.forward_infer(&gather_batch(patches, &idx))?;
        for local in 0..len {
            let img = sample_to_image(&compact, local);
            let (payload, bits) = crate::codec::encode_planes(&img, qf)?;
            let back = crate::codec::decode_planes(&payload, bits, cw2, ch2, c, qf)?;
            let dst = decoded.sample_mut(s0 + local);
            for (d, &s) in dst.iter_mut().zip(back.samples()) {
                *d = s as f64 / 255.0;
            }
        }
        s0 += len;
    }
    let up = bicubic_resize(&decoded, ResizeDir::Up2);
    if up.height() != h || up.width() != w {
        return Err(Error::shape(format!(
            "patch dims {h}x{w} must be even for the x2 codec loop"
        )));
    }
    Ok(up)
}

/// Fits RecCNN residuals toward (x - u) by mini-batch Adam over the given
/// decoded inputs. Never touches any ComCNN state.
pub fn train_reccnn(
    reccnn: &mut Model,
    decoded_inputs: &Tensor,
    originals: &Tensor,
    config: &TrainConfig,
    rng: &mut Xorshift64,
) -> Result<Vec<EpochStat>> {
    if reccnn.kind != ModelKind::RecCnn {
        return Err(Error::Usage("train_reccnn needs a RecCNN model".to_string()));
    }
    if decoded_inputs.batch() == 0 {
        return Err(Error::param("empty training batch".to_string()));
    }
    if decoded_inputs.dims() != originals.dims() {
        return Err(Error::shape(
            "decoded inputs and originals must share dims".to_string(),
        ));
    }
    let n = decoded_inputs.batch();
    let epochs = config.epochs_per_inner_loop;
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let started = Instant::now();
        let lr = lr_schedule(epoch, epochs, config.reccnn_lr.0, config.reccnn_lr.1);
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let u = gather_batch(decoded_inputs, chunk);
            let x = gather_batch(originals, chunk);
            let target = sub(&x, &u)?;
            let (res, cache) = reccnn.forward_train(&u)?;
            let (loss, grad) = mse_loss(&res, &target)?;
            let (_, grads) = reccnn.backward(&grad, &cache)?;
            reccnn.apply_grads(&grads, lr)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let stat = EpochStat {
            lr,
            mean_loss: loss_sum / n as f64,
            wall_secs: started.elapsed().as_secs_f64(),
        };
        if config.verbose {
            eprintln!(
                "  reccnn epoch {:>3}/{epochs}  lr {:.6}  loss {:.6}  ({:.1}s)",
                epoch + 1,
                stat.lr,
                stat.mean_loss,
                stat.wall_secs
            );
        }
        stats.push(stat);
    }
    Ok(stats)
}

/// Fits ComCNN through the frozen RecCNN with the codec bypassed: x ->
/// ComCNN -> bicubic x2 -> RecCNN (running statistics) -> compare to x.
/// Gradients reach theta1 through the resize transpose; theta2 stays
/// untouched by construction.
pub fn train_comcnn(
    comcnn: &mut Model,
    reccnn: &Model,
    originals: &Tensor,
    config: &TrainConfig,
    rng: &mut Xorshift64,
) -> Result<Vec<EpochStat>> {
    if comcnn.kind != ModelKind::ComCnn {
        return Err(Error::Usage("train_comcnn needs a ComCNN model".to_string()));
    }
    if reccnn.kind != ModelKind::RecCnn {
        return Err(Error::Usage(
            "train_comcnn needs the frozen RecCNN model".to_string(),
        ));
    }
    if originals.batch() == 0 {
        return Err(Error::param("empty training batch".to_string()));
    }
    let (_, _, h, w) = originals.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::param(format!(
            "surrogate path needs even patch dims, got {h}x{w}"
        )));
    }
    let n = originals.batch();
    let epochs = config.epochs_per_inner_loop;
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let started = Instant::now();
        let lr = lr_schedule(epoch, epochs, config.comcnn_lr.0, config.comcnn_lr.1);
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x = gather_batch(originals, chunk);
            let (compact, com_cache) = comcnn.forward_train(&x)?;
            let up = bicubic_resize(&compact, ResizeDir::Up2);
            let (res, rec_cache) = reccnn.forward_infer_cached(&up)?;
            let recon = add(&up, &res)?;
            let (loss, grad_recon) = mse_loss(&recon, &x)?;
            // reconstruction = up + RecCNN(up): the skip path carries the
            // gradient alongside the network path
            let through_net = reccnn.backward_input_frozen(&grad_recon, &rec_cache)?;
            let grad_up = add(&through_net, &grad_recon)?;
            let grad_compact = bicubic_resize_backward(
                &grad_up,
                ResizeDir::Up2,
                compact.height(),
                compact.width(),
            )?;
            let (_, grads) = comcnn.backward(&grad_compact, &com_cache)?;
            comcnn.apply_grads(&grads, lr)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let stat = EpochStat {
            lr,
            mean_loss: loss_sum / n as f64,
            wall_secs: started.elapsed().as_secs_f64(),
        };
        if config.verbose {
            eprintln!(
                "  comcnn epoch {:>3}/{epochs}  lr {:.6}  loss {:.6}  ({:.1}s)",
                epoch + 1,
                stat.lr,
                stat.mean_loss,
                stat.wall_secs
            );
        }
        stats.push(stat);
    }
    Ok(stats)
}

/// Everything `algorithm1` produces.
#[derive(Debug)]
pub struct TrainOutput {
    pub comcnn: Model,
    pub reccnn: Model,
    pub report: TrainReport,
}

/// The full alternating loop: random init, then per outer iteration
/// (a) rebuild decoded compact inputs with the real codec, (b) fit RecCNN
/// on them, (c) fit ComCNN against the frozen RecCNN. A checkpoint
/// directory enables periodic snapshots per `config.checkpoint_interval`.
pub fn algorithm1(
    images: &[Image],
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutput> {
    config.validate()?;
    let set = extract_patches(images, config.augment)?;
    if set.is_empty() {
        return Err(Error::param(
            "no usable patches: need images of at least 40x40".to_string(),
        ));
    }
    let master = Xorshift64::new(config.seed);
    let mut init_rng = master.derive(1);
    let channels = set.patches.channels();
    let mut comcnn = Model::comcnn(channels, &mut init_rng)?;
    let mut reccnn = Model::reccnn(channels, &mut init_rng)?;
    comcnn.init_adam();
    reccnn.init_adam();

    // held-out split for the per-iteration report
    let n = set.len();
    let mut idx: Vec<usize> = (0..n).collect();
    master.derive(2).shuffle(&mut idx);
    let val_count = if n >= 10 { n / 10 } else { 0 };
    let (train_idx, val_idx) = idx.split_at(n - val_count);
    let x_train = gather_batch(&set.patches, train_idx);
    let x_val = if val_idx.is_empty() {
        gather_batch(&set.patches, &train_idx[..train_idx.len().min(4)])
    } else {
        gather_batch(&set.patches, val_idx)
    };

    let mut report = TrainReport::default();
    let mut global_epoch = 0;
    for t in 1..=config.outer_iterations {
        if config.verbose {
            eprintln!(
                "outer iteration {t}/{}: rebuilding decoded compact inputs",
                config.outer_iterations
            );
        }
        let u = build_decoded_inputs(&comcnn, &x_train, config.qf)?;

        let mut rec_rng = master.derive(1000 + t as u64);
        for stat in train_reccnn(&mut reccnn, &u, &x_train, config, &mut rec_rng)? {
            report.epochs.push(EpochRecord {
                epoch: global_epoch,
                network: "reccnn",
                outer_t: t,
                lr: stat.lr,
                mean_loss: stat.mean_loss,
                wall_secs: stat.wall_secs,
            });
            global_epoch += 1;
        }

        let mut com_rng = master.derive(2000 + t as u64);
        for stat in train_comcnn(&mut comcnn, &reccnn, &x_train, config, &mut com_rng)? {
            report.epochs.push(EpochRecord {
                epoch: global_epoch,
                network: "comcnn",
                outer_t: t,
                lr: stat.lr,
                mean_loss: stat.mean_loss,
                wall_secs: stat.wall_secs,
            });
            global_epoch += 1;
        }

        let outer = validate(&comcnn, &reccnn, &x_val, config.qf, t)?;
        if config.verbose {
            eprintln!(
                "outer iteration {t}: val psnr {:.2} dB  ssim {:.4}  bpp {:.4}",
                outer.psnr, outer.ssim, outer.bpp
            );
        }
        report.outer.push(outer);

        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_interval > 0 && t % config.checkpoint_interval == 0 {
                save_model(&comcnn, &dir.join("comcnn.bin"))?;
                save_model(&reccnn, &dir.join("reccnn.bin"))?;
            }
        }
    }
    Ok(TrainOutput {
        comcnn,
        reccnn,
        report,
    })
}

/// End-to-end pipeline metrics over a validation batch.
fn validate(
    comcnn: &Model,
    reccnn: &Model,
    patches: &Tensor,
    qf: u8,
    t: usize,
) -> Result<OuterRecord> {
    let (n, _, h, w) = patches.dims();
    let mut psnrs = Vec::with_capacity(n);
    let (mut ssim_sum, mut bpp_sum) = (0.0, 0.0);
    for s in 0..n {
        let original = sample_to_image(patches, s);
        let bs = pipeline_compress(&original, comcnn, qf)?;
        let recon = pipeline_decompress(&bs, reccnn)?;
        psnrs.push(metrics::psnr(&original, &recon)?);
        ssim_sum += metrics::ssim(&original, &recon)?;
        bpp_sum += bits_per_pixel(&bs, w, h)?;
    }
    let finite: Vec<f64> = psnrs.iter().copied().filter(|p| p.is_finite()).collect();
    let psnr = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    Ok(OuterRecord {
        t,
        psnr,
        ssim: ssim_sum / n as f64,
        bpp: bpp_sum / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::synthetic_image;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            seed: 3,
            outer_iterations: 1,
            epochs_per_inner_loop: 2,
            batch_size: 4,
            qf: 30,
            augment: false,
            checkpoint_interval: 0,
            comcnn_lr: (1e-3, 1e-4),
            reccnn_lr: (1e-3, 1e-4),
            verbose: false,
        }
    }

    #[test]
    fn lr_schedule_endpoints() {
        assert_eq!(lr_schedule(0, 50, 0.01, 0.0001), 0.01);
        let last = lr_schedule(49, 50, 0.01, 0.0001);
        assert!((last - 0.0001).abs() < 1e-12);
        assert_eq!(lr_schedule(0, 1, 0.5, 0.1), 0.5);
    }

    #[test]
    fn lr_schedule_midpoint_is_geometric() {
        // halfway between epochs 24 and 25 of 50 the rate passes through
        // sqrt(lr(24) * lr(25)) = 0.01 * 10^(-2 * 24.5/49) = 1e-3
        let a = lr_schedule(24, 50, 0.01, 0.0001);
        let b = lr_schedule(25, 50, 0.01, 0.0001);
        assert!(((a * b).sqrt() - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn perfect_inputs_and_zero_net_give_zero_loss_and_gradients() {
        let mut rng = Xorshift64::new(5);
        let mut reccnn = Model::reccnn(1, &mut rng).unwrap();
        reccnn.zero_params();
        let imgs = vec![synthetic_image(40, 40, 8)];
        let x = extract_patches(&imgs, false).unwrap().patches;
        // u = x: the residual target is zero and the zero network is exact
        let target = sub(&x, &x).unwrap();
        let (res, cache) = reccnn.forward_train(&x).unwrap();
        let (loss, grad) = mse_loss(&res, &target).unwrap();
        assert_eq!(loss, 0.0);
        let (gin, grads) = reccnn.backward(&grad, &cache).unwrap();
        assert!(gin.data().iter().all(|&g| g == 0.0));
        for g in &grads {
            match g {
                crate::models::LayerGrads::Conv(c) => {
                    assert!(c.weights.iter().all(|&v| v == 0.0));
                    assert!(c.bias.iter().all(|&v| v == 0.0));
                }
                crate::models::LayerGrads::BatchNorm(b) => {
                    assert!(b.gamma.iter().all(|&v| v == 0.0));
                    assert!(b.beta.iter().all(|&v| v == 0.0));
                }
                crate::models::LayerGrads::None => {}
            }
        }
        // and the loop reports zero loss without moving any parameter
        let mut cfg = tiny_config();
        cfg.epochs_per_inner_loop = 1;
        let stats = train_reccnn(&mut reccnn, &x, &x, &cfg, &mut Xorshift64::new(1)).unwrap();
        assert_eq!(stats[0].mean_loss, 0.0);
        let first_conv = reccnn.layers.iter().find_map(|l| match l {
            crate::models::Layer::Conv(c) => Some(c),
            _ => None,
        });
        assert!(first_conv.unwrap().weights.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inner_loops_do_not_cross_mutate() {
        let mut rng = Xorshift64::new(6);
        let mut comcnn = Model::comcnn(1, &mut rng).unwrap();
        let mut reccnn = Model::reccnn(1, &mut rng).unwrap();
        let imgs = vec![synthetic_image(60, 60, 9)];
        let x = extract_patches(&imgs, false).unwrap().patches;
        let cfg = tiny_config();

        let u = build_decoded_inputs(&comcnn, &x, cfg.qf).unwrap();
        let com_digest = comcnn.params_digest();
        train_reccnn(&mut reccnn, &u, &x, &cfg, &mut Xorshift64::new(2)).unwrap();
        assert_eq!(comcnn.params_digest(), com_digest);

        let rec_digest = reccnn.params_digest();
        train_comcnn(&mut comcnn, &reccnn, &x, &cfg, &mut Xorshift64::new(3)).unwrap();
        assert_eq!(reccnn.params_digest(), rec_digest);
        assert_ne!(comcnn.params_digest(), com_digest);
    }

    #[test]
    fn empty_batch_is_a_parameter_error() {
        let mut rng = Xorshift64::new(7);
        let mut reccnn = Model::reccnn(1, &mut rng).unwrap();
        let empty = Tensor::zeros(0, 1, 40, 40);
        let cfg = tiny_config();
        assert!(matches!(
            train_reccnn(&mut reccnn, &empty, &empty, &cfg, &mut Xorshift64::new(1)),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn wrong_model_kind_is_a_usage_error() {
        let mut rng = Xorshift64::new(8);
        let mut comcnn = Model::comcnn(1, &mut rng).unwrap();
        let x = Tensor::zeros(2, 1, 40, 40);
        let cfg = tiny_config();
        let not_reccnn = comcnn.clone();
        assert!(matches!(
            train_comcnn(&mut comcnn, &not_reccnn, &x, &cfg, &mut Xorshift64::new(1)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn algorithm1_smoke_run_is_reproducible() {
        let imgs: Vec<Image> = (0..2).map(|i| synthetic_image(60, 60, 30 + i)).collect();
        let cfg = tiny_config();
        let a = algorithm1(&imgs, &cfg, None).unwrap();
        let b = algorithm1(&imgs, &cfg, None).unwrap();
        assert_eq!(a.comcnn.params_digest(), b.comcnn.params_digest());
        assert_eq!(a.reccnn.params_digest(), b.reccnn.params_digest());
        assert_eq!(a.report.epochs_csv(), b.report.epochs_csv());
        assert_eq!(a.report.summary_csv(), b.report.summary_csv());
        // T=1, two inner loops of 2 epochs each
        assert_eq!(a.report.epochs.len(), 4);
        assert_eq!(a.report.outer.len(), 1);
    }

    #[test]
    fn algorithm1_rejects_tiny_images() {
        let imgs = vec![synthetic_image(20, 20, 1)];
        assert!(algorithm1(&imgs, &tiny_config(), None).is_err());
    }
}
