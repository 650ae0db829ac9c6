//! The gradient-check matrix: every layer type, the resize adjoint, and the
//! deep composites, each validated against central finite differences.

use crate::models::{bicubic_resize, bicubic_resize_backward, Layer, Model, ModelKind, ResizeDir};
use crate::rng::Xorshift64;
use crate::tensor::{
    finite_diff_grad_check, mse_loss, relu_backward, relu_forward, BatchNormLayer, ConvLayer,
    Tensor,
};

/// One line of the report.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Corrupts one analytic gradient before comparison; proves the checker
    /// can fail.
    pub inject_fault: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 0,
            inject_fault: false,
        }
    }
}

fn random_tensor(rng: &mut Xorshift64, n: usize, c: usize, h: usize, w: usize, spread: f64) -> Tensor {
    let data = (0..n * c * h * w)
        .map(|_| (rng.next_f64() * 2.0 - 1.0) * spread)
        .collect();
    Tensor::from_vec(n, c, h, w, data).expect("consistent dims")
}

fn random_conv(rng: &mut Xorshift64, in_ch: usize, out_ch: usize, stride: usize) -> ConvLayer {
    let mut layer = ConvLayer::new(in_ch, out_ch, stride).expect("valid conv");
    crate::tensor::he_init(&mut layer, rng);
    for b in layer.bias.iter_mut() {
        *b = 0.1 * (rng.next_f64() - 0.5);
    }
    layer
}

/// Weight and input gradients of loss = mse(conv(x), target).
fn check_conv(rng: &mut Xorshift64, stride: usize, h: usize, w: usize, cin: usize, cout: usize) -> f64 {
    let layer = random_conv(rng, cin, cout, stride);
    let input = random_tensor(rng, 2, cin, h, w, 1.0);
    let (oh, ow) = layer.out_dims(h, w);
    let target = random_tensor(rng, 2, cout, oh, ow, 1.0);

    let out = layer.forward(&input).expect("forward");
    let (_, grad_out) = mse_loss(&out, &target).expect("loss");
    let (grad_in, grads) = layer.backward(&grad_out, &input).expect("backward");

    let mut worst = 0.0f64;
    let mut f_w = |wts: &[f64]| {
        let mut l = layer.clone();
        l.weights.copy_from_slice(wts);
        let out = l.forward(&input).expect("forward");
        mse_loss(&out, &target).expect("loss").0
    };
    worst = worst.max(finite_diff_grad_check(
        &mut f_w,
        &layer.weights,
        &grads.weights,
        1e-5,
        48,
        rng,
    ));
    let mut f_x = |xs: &[f64]| {
        let x = Tensor::from_vec(2, cin, h, w, xs.to_vec()).expect("dims");
        let out = layer.forward(&x).expect("forward");
        mse_loss(&out, &target).expect("loss").0
    };
    worst = worst.max(finite_diff_grad_check(
        &mut f_x,
        input.data(),
        grad_in.data(),
        1e-5,
        48,
        rng,
    ));
    let mut f_b = |bs: &[f64]| {
        let mut l = layer.clone();
        l.bias.copy_from_slice(bs);
        let out = l.forward(&input).expect("forward");
        mse_loss(&out, &target).expect("loss").0
    };
    worst.max(finite_diff_grad_check(
        &mut f_b,
        &layer.bias,
        &grads.bias,
        1e-5,
        48,
        rng,
    ))
}

fn check_relu(rng: &mut Xorshift64, inject_fault: bool) -> f64 {
    // a linear functional of relu(x) keeps the whole map piecewise linear,
    // so central differences are exact once inputs stay off the kink
    let mut input = random_tensor(rng, 1, 2, 6, 6, 1.0);
    for v in input.data_mut() {
        if v.abs() < 0.1 {
            *v = 0.3 * v.signum().max(0.5);
        }
    }
    let weights = random_tensor(rng, 1, 2, 6, 6, 1.0);
    let mut grad_in = relu_backward(&weights, &input).expect("backward");
    if inject_fault {
        grad_in.data_mut()[0] += 0.5;
    }
    let mut f = |xs: &[f64]| {
        let x = Tensor::from_vec(1, 2, 6, 6, xs.to_vec()).expect("dims");
        relu_forward(&x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    finite_diff_grad_check(&mut f, input.data(), grad_in.data(), 1e-5, 72, rng)
}

fn check_batchnorm(rng: &mut Xorshift64) -> f64 {
    let base = {
        let mut bn = BatchNormLayer::new(3);
        for (g, b) in bn.gamma.iter_mut().zip(bn.beta.iter_mut()) {
            *g = 0.8 + 0.4 * rng.next_f64();
            *b = rng.next_f64() - 0.5;
        }
        bn
    };
    let input = random_tensor(rng, 2, 3, 4, 4, 2.0);
    let target = random_tensor(rng, 2, 3, 4, 4, 1.0);

    let mut bn = base.clone();
    let (out, cache) = bn.forward_train(&input).expect("forward");
    let (_, grad_out) = mse_loss(&out, &target).expect("loss");
    let (grad_in, grads) = base
        .backward_train(&grad_out, &input, &cache)
        .expect("backward");

    let loss_for = |bn_eval: &BatchNormLayer, x: &Tensor| {
        let mut fresh = bn_eval.clone();
        let (out, _) = fresh.forward_train(x).expect("forward");
        mse_loss(&out, &target).expect("loss").0
    };

    let mut worst = 0.0f64;
    let mut f_x = |xs: &[f64]| {
        let x = Tensor::from_vec(2, 3, 4, 4, xs.to_vec()).expect("dims");
        loss_for(&base, &x)
    };
    worst = worst.max(finite_diff_grad_check(
        &mut f_x,
        input.data(),
        grad_in.data(),
        1e-5,
        48,
        rng,
    ));
    let mut f_g = |gs: &[f64]| {
        let mut bn2 = base.clone();
        bn2.gamma.copy_from_slice(gs);
        loss_for(&bn2, &input)
    };
    worst = worst.max(finite_diff_grad_check(
        &mut f_g,
        &base.gamma,
        &grads.gamma,
        1e-5,
        8,
        rng,
    ));
    let mut f_b = |bs: &[f64]| {
        let mut bn2 = base.clone();
        bn2.beta.copy_from_slice(bs);
        loss_for(&bn2, &input)
    };
    worst.max(finite_diff_grad_check(
        &mut f_b,
        &base.beta,
        &grads.beta,
        1e-5,
        8,
        rng,
    ))
}

fn check_mse(rng: &mut Xorshift64) -> f64 {
    let pred = random_tensor(rng, 3, 1, 4, 4, 1.0);
    let target = random_tensor(rng, 3, 1, 4, 4, 1.0);
    let (_, grad) = mse_loss(&pred, &target).expect("loss");
    let mut f = |ps: &[f64]| {
        let p = Tensor::from_vec(3, 1, 4, 4, ps.to_vec()).expect("dims");
        mse_loss(&p, &target).expect("loss").0
    };
    finite_diff_grad_check(&mut f, pred.data(), grad.data(), 1e-6, 48, rng)
}

fn check_bicubic_fd(rng: &mut Xorshift64) -> f64 {
    let input = random_tensor(rng, 1, 1, 6, 7, 1.0);
    let target = random_tensor(rng, 1, 1, 12, 14, 1.0);
    let up = bicubic_resize(&input, ResizeDir::Up2);
    let (_, grad_out) = mse_loss(&up, &target).expect("loss");
    let grad_in = bicubic_resize_backward(&grad_out, ResizeDir::Up2, 6, 7).expect("adjoint");
    let mut f = |xs: &[f64]| {
        let x = Tensor::from_vec(1, 1, 6, 7, xs.to_vec()).expect("dims");
        let up = bicubic_resize(&x, ResizeDir::Up2);
        mse_loss(&up, &target).expect("loss").0
    };
    finite_diff_grad_check(&mut f, input.data(), grad_in.data(), 1e-6, 42, rng)
}

fn check_bicubic_adjoint(rng: &mut Xorshift64) -> f64 {
    let mut worst = 0.0f64;
    for dir in [ResizeDir::Up2, ResizeDir::Down2] {
        let x = random_tensor(rng, 1, 2, 9, 11, 1.0);
        let ax = bicubic_resize(&x, dir);
        let y = random_tensor(rng, 1, 2, ax.height(), ax.width(), 1.0);
        let aty = bicubic_resize_backward(&y, dir, 9, 11).expect("adjoint");
        let lhs: f64 = ax.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(aty.data()).map(|(a, b)| a * b).sum();
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-8));
    }
    worst
}

/// Loss of a model fragment on a fixed input/target, as a function of one
/// conv layer's weights. Train-mode forward so batch statistics stay part
/// of the differentiated function.
fn model_loss(model: &Model, input: &Tensor, target: &Tensor) -> f64 {
    let mut m = model.clone();
    let (out, _) = m.forward_train(input).expect("forward");
    mse_loss(&out, target).expect("loss").0
}

fn check_model_fragment(
    model: &Model,
    input: &Tensor,
    target: &Tensor,
    conv_indices: &[usize],
    coords_per_buffer: usize,
    eps: f64,
    rng: &mut Xorshift64,
) -> f64 {
    let mut m = model.clone();
    let (out, cache) = m.forward_train(input).expect("forward");
    let (_, grad_out) = mse_loss(&out, target).expect("loss");
    let (grad_in, grads) = m.backward(&grad_out, &cache).expect("backward");

    let mut worst = 0.0f64;
    for &li in conv_indices {
        let (weights, analytic) = match (&model.layers[li], &grads[li]) {
            (Layer::Conv(c), crate::models::LayerGrads::Conv(g)) => (&c.weights, &g.weights),
            _ => panic!("layer {li} is not a conv layer"),
        };
        let mut f = |ws: &[f64]| {
            let mut m2 = model.clone();
            if let Layer::Conv(c) = &mut m2.layers[li] {
                c.weights.copy_from_slice(ws);
            }
            model_loss(&m2, input, target)
        };
        worst = worst.max(finite_diff_grad_check(
            &mut f,
            weights,
            analytic,
            eps,
            coords_per_buffer,
            rng,
        ));
    }
    let (n, c, h, w) = input.dims();
    let mut f_x = |xs: &[f64]| {
        let x = Tensor::from_vec(n, c, h, w, xs.to_vec()).expect("dims");
        model_loss(model, &x, target)
    };
    worst.max(finite_diff_grad_check(
        &mut f_x,
        input.data(),
        grad_in.data(),
        eps,
        coords_per_buffer,
        rng,
    ))
}

fn check_composite_5layer(rng: &mut Xorshift64) -> f64 {
    let model = Model {
        kind: ModelKind::ComCnn,
        channels: 1,
        layers: vec![
            Layer::Conv(random_conv(rng, 1, 4, 1)),
            Layer::Relu,
            Layer::BatchNorm(BatchNormLayer::new(4)),
            Layer::Relu,
            Layer::Conv(random_conv(rng, 4, 1, 1)),
        ],
        residual: false,
        adam: None,
    };
    let input = random_tensor(rng, 2, 1, 8, 8, 1.0);
    let target = random_tensor(rng, 2, 1, 8, 8, 1.0);
    check_model_fragment(&model, &input, &target, &[0, 4], 24, 1e-5, rng)
}

fn check_reccnn_20layer(rng: &mut Xorshift64) -> f64 {
    let model = Model::reccnn(1, rng).expect("reccnn");
    let input = random_tensor(rng, 1, 1, 8, 8, 0.5);
    let target = random_tensor(rng, 1, 1, 8, 8, 0.5);
    // first conv, a middle conv, the final conv
    let convs: Vec<usize> = model
        .layers
        .iter()
        .enumerate()
        .filter_map(|(i, l)| matches!(l, Layer::Conv(_)).then_some(i))
        .collect();
    let picks = [convs[0], convs[convs.len() / 2], *convs.last().unwrap()];
    check_model_fragment(&model, &input, &target, &picks, 8, 1e-6, rng)
}

/// The full compact-training surrogate: x -> ComCNN -> bicubic x2 -> frozen
/// RecCNN -> reconstruction loss, differentiated with respect to ComCNN
/// weights.
fn check_surrogate(rng: &mut Xorshift64) -> f64 {
    let comcnn = Model::comcnn(1, rng).expect("comcnn");
    let reccnn = Model::reccnn(1, rng).expect("reccnn");
    let input = random_tensor(rng, 1, 1, 8, 8, 0.5);

    let surrogate_loss = |com: &Model| -> f64 {
        let compact = com.forward_infer(&input).expect("comcnn forward");
        let up = bicubic_resize(&compact, ResizeDir::Up2);
        let res = reccnn.forward_infer(&up).expect("reccnn forward");
        let mut recon = res;
        for (r, &u) in recon.data_mut().iter_mut().zip(up.data()) {
            *r += u;
        }
        mse_loss(&recon, &input).expect("loss").0
    };

    // analytic path, mirroring train_comcnn
    let mut com = comcnn.clone();
    let (compact, com_cache) = com.forward_train(&input).expect("forward");
    let up = bicubic_resize(&compact, ResizeDir::Up2);
    let (res, rec_cache) = reccnn.forward_infer_cached(&up).expect("forward");
    let mut recon = res;
    for (r, &u) in recon.data_mut().iter_mut().zip(up.data()) {
        *r += u;
    }
    let (_, grad_recon) = mse_loss(&recon, &input).expect("loss");
    let through_net = reccnn
        .backward_input_frozen(&grad_recon, &rec_cache)
        .expect("frozen backward");
    let mut grad_up = through_net;
    for (g, &gr) in grad_up.data_mut().iter_mut().zip(grad_recon.data()) {
        *g += gr;
    }
    let grad_compact =
        bicubic_resize_backward(&grad_up, ResizeDir::Up2, compact.height(), compact.width())
            .expect("adjoint");
    let (_, grads) = com.backward(&grad_compact, &com_cache).expect("backward");

    let (weights, analytic) = match (&comcnn.layers[0], &grads[0]) {
        (Layer::Conv(c), crate::models::LayerGrads::Conv(g)) => (&c.weights, &g.weights),
        _ => unreachable!("layer 0 of ComCNN is a conv"),
    };
    let mut f = |ws: &[f64]| {
        let mut c2 = comcnn.clone();
        if let Layer::Conv(c) = &mut c2.layers[0] {
            c.weights.copy_from_slice(ws);
        }
        surrogate_loss(&c2)
    };
    finite_diff_grad_check(&mut f, weights, analytic, 1e-6, 12, rng)
}

/// Runs every check; callers decide how to report rows and which exit code
/// to use.
pub fn run_suite(opts: &SuiteOptions) -> Vec<CheckRow> {
    let mut rng = Xorshift64::new(opts.seed);
    let mut rows = Vec::new();
    rows.push(CheckRow {
        name: "conv_stride1",
        max_rel_err: check_conv(&mut rng, 1, 5, 5, 2, 3),
        tolerance: 1e-4,
    });
    rows.push(CheckRow {
        name: "conv_stride2",
        max_rel_err: check_conv(&mut rng, 2, 9, 9, 1, 2),
        tolerance: 1e-4,
    });
    rows.push(CheckRow {
        name: "conv_winograd",
        max_rel_err: check_conv(&mut rng, 1, 12, 12, 2, 2),
        tolerance: 1e-4,
    });
    rows.push(CheckRow {
        name: "relu",
        max_rel_err: check_relu(&mut rng, opts.inject_fault),
        tolerance: 1e-8,
    });
    rows.push(CheckRow {
        name: "batchnorm",
        max_rel_err: check_batchnorm(&mut rng),
        tolerance: 1e-4,
    });
    rows.push(CheckRow {
        name: "mse",
        max_rel_err: check_mse(&mut rng),
        tolerance: 1e-6,
    });
    rows.push(CheckRow {
        name: "bicubic",
        max_rel_err: check_bicubic_fd(&mut rng),
        tolerance: 1e-6,
    });
    rows.push(CheckRow {
        name: "bicubic_adjoint",
        max_rel_err: check_bicubic_adjoint(&mut rng),
        tolerance: 1e-9,
    });
    rows.push(CheckRow {
        name: "composite_5layer",
        max_rel_err: check_composite_5layer(&mut rng),
        tolerance: 1e-4,
    });
    rows.push(CheckRow {
        name: "reccnn_20layer",
        max_rel_err: check_reccnn_20layer(&mut rng),
        tolerance: 1e-3,
    });
    rows.push(CheckRow {
        name: "comcnn_surrogate",
        max_rel_err: check_surrogate(&mut rng),
        tolerance: 1e-3,
    });
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes() {
        let rows = run_suite(&SuiteOptions::default());
        assert!(rows.len() >= 6);
        for row in &rows {
            assert!(
                row.passed(),
                "{}: {} >= {}",
                row.name,
                row.max_rel_err,
                row.tolerance
            );
        }
    }

    #[test]
    fn fault_injection_is_detected() {
        let rows = run_suite(&SuiteOptions {
            seed: 0,
            inject_fault: true,
        });
        let relu = rows.iter().find(|r| r.name == "relu").unwrap();
        assert!(!relu.passed());
    }

    #[test]
    fn suite_is_deterministic_per_seed() {
        let a = run_suite(&SuiteOptions { seed: 5, inject_fault: false });
        let b = run_suite(&SuiteOptions { seed: 5, inject_fault: false });
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.max_rel_err.to_bits(), y.max_rel_err.to_bits());
        }
    }
}
