//! Central finite-difference comparison for analytic gradients.

use crate::rng::Xorshift64;

/// Compares `analytic` against `(f(x+eps e_i) - f(x-eps e_i)) / 2 eps` and
/// returns the maximum relative error, with the denominator guarded by
/// `max(|fd|, |analytic|, 1e-8)`.
///
/// For large parameter vectors at most `max_coords` coordinates are probed,
/// chosen by a seeded shuffle so the selection is reproducible. The
/// difference quotient only ever calls `f`, so this oracle stays independent
/// of whatever backward pass produced `analytic`.
pub fn finite_diff_grad_check(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    analytic: &[f64],
    eps: f64,
    max_coords: usize,
    rng: &mut Xorshift64,
) -> f64 {
    assert_eq!(x0.len(), analytic.len(), "gradient length mismatch");
    let mut coords: Vec<usize> = (0..x0.len()).collect();
    if coords.len() > max_coords {
        rng.shuffle(&mut coords);
        coords.truncate(max_coords);
    }
    let mut x = x0.to_vec();
    let mut worst = 0.0f64;
    for &i in &coords {
        let saved = x[i];
        x[i] = saved + eps;
        let fp = f(&x);
        x[i] = saved - eps;
        let fm = f(&x);
        x[i] = saved;
        let fd = (fp - fm) / (2.0 * eps);
        let denom = fd.abs().max(analytic[i].abs()).max(1e-8);
        worst = worst.max((fd - analytic[i]).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_recovered() {
        // f(x) = sum x_i^2, grad = 2x
        let x0 = vec![0.3, -1.2, 2.5];
        let analytic: Vec<f64> = x0.iter().map(|v| 2.0 * v).collect();
        let err = finite_diff_grad_check(
            &mut |x| x.iter().map(|v| v * v).sum(),
            &x0,
            &analytic,
            1e-5,
            100,
            &mut Xorshift64::new(1),
        );
        assert!(err < 1e-9, "err {err}");
    }

    #[test]
    fn detects_a_corrupted_gradient() {
        let x0 = vec![1.0, 2.0];
        let bad = vec![2.0, 4.5]; // second entry off by 0.5
        let err = finite_diff_grad_check(
            &mut |x| x.iter().map(|v| v * v).sum(),
            &x0,
            &bad,
            1e-5,
            100,
            &mut Xorshift64::new(2),
        );
        assert!(err > 0.05, "err {err}");
    }

    #[test]
    fn coordinate_sampling_is_deterministic() {
        let x0: Vec<f64> = (0..200).map(|i| i as f64 * 0.01).collect();
        let analytic: Vec<f64> = x0.iter().map(|v| 2.0 * v).collect();
        let run = |seed| {
            finite_diff_grad_check(
                &mut |x| x.iter().map(|v| v * v).sum(),
                &x0,
                &analytic,
                1e-5,
                16,
                &mut Xorshift64::new(seed),
            )
        };
        assert_eq!(run(3).to_bits(), run(3).to_bits());
    }
}
