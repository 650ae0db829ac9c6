//! Deterministic synthetic images for tests, demos and the acceptance
//! suite: smooth gradients, soft-edged shapes and mild texture, so they
//! compress like photographs rather than like noise.

use crate::codec::Image;
use crate::rng::Xorshift64;

/// A reproducible grayscale test image. The same (w, h, seed) always yields
/// byte-identical samples.
pub fn synthetic_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = Xorshift64::new(seed);
    let mut field = vec![0.0f64; width * height];

    // low-frequency background: a handful of random-phase waves
    let waves = 5;
    for _ in 0..waves {
        let fx = (rng.next_f64() * 2.0 + 0.3) * std::f64::consts::PI / width as f64 * 2.0;
        let fy = (rng.next_f64() * 2.0 + 0.3) * std::f64::consts::PI / height as f64 * 2.0;
        let phase = rng.next_f64() * std::f64::consts::TAU;
        let amp = 20.0 + 25.0 * rng.next_f64();
        for y in 0..height {
            for x in 0..width {
                field[y * width + x] +=
                    amp * (fx * x as f64 + phase).sin() * (fy * y as f64 - phase).cos();
            }
        }
    }

    // soft-edged discs of varying intensity
    let discs = 4 + rng.next_below(4);
    for _ in 0..discs {
        let cx = rng.next_f64() * width as f64;
        let cy = rng.next_f64() * height as f64;
        let r = (width.min(height) as f64) * (0.08 + 0.15 * rng.next_f64());
        let amp = 60.0 * (rng.next_f64() - 0.5) * 2.0;
        let feather = r * 0.3 + 1.0;
        for y in 0..height {
            for x in 0..width {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                let t = ((r - d) / feather).clamp(-1.0, 1.0);
                field[y * width + x] += amp * 0.5 * (1.0 + t);
            }
        }
    }

    // a diagonal luminance ramp plus faint texture
    let ramp = rng.next_f64() * 40.0;
    for y in 0..height {
        for x in 0..width {
            let v = &mut field[y * width + x];
            *v += ramp * (x as f64 / width as f64 + y as f64 / height as f64) * 0.5;
            *v += 4.0 * (rng.next_f64() - 0.5);
        }
    }

    let samples = field
        .iter()
        .map(|&v| (128.0 + v).round().clamp(0.0, 255.0) as u8)
        .collect();
    Image::from_samples(width, height, 1, samples).expect("field length matches dims")
}

/// The training corpus used by the desk-scale runs: ten 180x180 images.
pub fn training_corpus() -> Vec<Image> {
    (0..10).map(|i| synthetic_image(180, 180, 1000 + i)).collect()
}

/// Held-out images never seen in training.
pub fn heldout_corpus() -> Vec<Image> {
    (0..4).map(|i| synthetic_image(120, 120, 9000 + i)).collect()
}
