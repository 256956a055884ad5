//! Deterministic synthetic image set.
//!
//! A stand-in for CIFAR-10 when the real archive is unavailable (offline
//! environments, CI). Images are compositions of smooth color gradients,
//! soft-edged shapes and low-frequency texture — structured enough that a
//! small autoencoder trained on them behaves like one trained on natural
//! thumbnails. Every pixel is a pure function of `(seed, image id)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::{Dataset, IMG_CHANNELS, IMG_DIM, IMG_HEIGHT, IMG_WIDTH};
use crate::error::Result;
use crate::seed::{derive, Stream};

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

struct Shape {
    cx: f64,
    cy: f64,
    radius: f64,
    rect: bool,
    color: [f64; 3],
}

fn render_image(rng: &mut ChaCha12Rng, out: &mut [f32]) {
    debug_assert_eq!(out.len(), IMG_DIM);

    // Background: base color plus a linear gradient in a random direction.
    let base: [f64; 3] = [rng.random_range(0.15..0.85), rng.random_range(0.15..0.85), rng.random_range(0.15..0.85)];
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (angle.cos(), angle.sin());
    let grad_strength: f64 = rng.random_range(0.1..0.4);
    let grad_tint: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];

    // Low-frequency sinusoidal texture.
    let tex_fx: f64 = rng.random_range(0.5..2.5);
    let tex_fy: f64 = rng.random_range(0.5..2.5);
    let tex_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let tex_strength: f64 = rng.random_range(0.02..0.10);

    let n_shapes = rng.random_range(2..=4);
    let shapes: Vec<Shape> = (0..n_shapes)
        .map(|_| Shape {
            cx: rng.random_range(0.1..0.9),
            cy: rng.random_range(0.1..0.9),
            radius: rng.random_range(0.08..0.30),
            rect: rng.random_bool(0.4),
            color: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
        })
        .collect();

    for y in 0..IMG_HEIGHT {
        for x in 0..IMG_WIDTH {
            let u = x as f64 / (IMG_WIDTH - 1) as f64;
            let v = y as f64 / (IMG_HEIGHT - 1) as f64;
            let g = ((u - 0.5) * gx + (v - 0.5) * gy) * grad_strength;
            let tex = (std::f64::consts::TAU * (tex_fx * u + tex_fy * v) + tex_phase).sin() * tex_strength;
            let mut px = [0.0f64; 3];
            for ch in 0..IMG_CHANNELS {
                px[ch] = base[ch] + g * grad_tint[ch] + tex;
            }
            for s in &shapes {
                let coverage = if s.rect {
                    let dx = (u - s.cx).abs();
                    let dy = (v - s.cy).abs();
                    let d = dx.max(dy);
                    1.0 - smoothstep(s.radius - 0.03, s.radius + 0.03, d)
                } else {
                    let d = ((u - s.cx).powi(2) + (v - s.cy).powi(2)).sqrt();
                    1.0 - smoothstep(s.radius - 0.03, s.radius + 0.03, d)
                };
                if coverage > 0.0 {
                    for ch in 0..IMG_CHANNELS {
                        px[ch] = px[ch] * (1.0 - coverage) + s.color[ch] * coverage;
                    }
                }
            }
            for ch in 0..IMG_CHANNELS {
                out[ch * IMG_HEIGHT * IMG_WIDTH + y * IMG_WIDTH + x] = px[ch].clamp(0.0, 1.0) as f32;
            }
        }
    }
}

/// Generate `count` deterministic synthetic images.
pub fn generate(count: usize, seed: u64) -> Result<Dataset> {
    let mut pixels = vec![0f32; count * IMG_DIM];
    for (i, chunk) in pixels.chunks_exact_mut(IMG_DIM).enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(derive(seed, Stream::Synthetic, &[i as u64]));
        render_image(&mut rng, chunk);
    }
    Dataset::from_pixels(pixels)
}

/// Generate disjoint train/test splits (test ids offset past the train ids).
pub fn generate_splits(train: usize, test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let all = generate(train + test, seed)?;
    let train_set = all.subset(train);
    let test_pixels: Vec<f32> = (train..train + test).flat_map(|i| all.image(i).to_vec()).collect();
    Ok((train_set, Dataset::from_pixels(test_pixels)?))
}
