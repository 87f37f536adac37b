//! Deterministic synthetic covers: smooth shading, sharp edges, textured
//! patches and mild sensor noise, quantized to 8 bits.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::filters::{box_mean_mirror, Plane};
use crate::image::GrayImage;
use crate::rng::{derive_seed, Rng};

/// Content knobs of the generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthParams {
    /// Sensor noise standard deviation range.
    pub noise: (f64, f64),
    /// Maximum number of textured discs (at least one is drawn).
    pub max_patches: usize,
    /// Disc radius range as a fraction of the image size.
    pub patch_radius: (f64, f64),
    /// Multiplier on the texture amplitude.
    pub texture_gain: f64,
    pub max_edges: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { noise: (0.0, 0.3), max_patches: 2, patch_radius: (0.1, 0.25), texture_gain: 0.4, max_edges: 2 }
    }
}

/// `n` covers of `size × size`; image `i` depends only on `(seed, i)`.
pub fn synth_dataset(n: usize, size: usize, seed: u64) -> Result<Vec<GrayImage>> {
    synth_dataset_with(n, size, seed, &SynthParams::default())
}

pub fn synth_dataset_with(n: usize, size: usize, seed: u64, params: &SynthParams) -> Result<Vec<GrayImage>> {
    if n == 0 {
        return Err(Error::InvalidConfig("dataset size must be at least 1".into()));
    }
    if size < 16 {
        return Err(Error::InvalidConfig(format!("image size {size} below 16")));
    }
    Ok((0..n).map(|i| synth_image(size, derive_seed(seed, i as u64), params)).collect())
}

pub fn synth_image(size: usize, seed: u64, params: &SynthParams) -> GrayImage {
    let mut rng = Rng::new(seed);
    let s = size as f64;
    let mut field = vec![rng.uniform() * 120.0 + 60.0; size * size];

    // low-frequency shading
    for _ in 0..2 + rng.below(4) {
        let (fx, fy) = (rng.uniform() * 2.0, rng.uniform() * 2.0);
        let (phase, amp) = (rng.uniform() * 2.0 * PI, 10.0 + rng.uniform() * 30.0);
        for r in 0..size {
            for c in 0..size {
                field[r * size + c] += amp * (2.0 * PI * (fx * c as f64 + fy * r as f64) / s + phase).cos();
            }
        }
    }

    // sharp half-plane edges
    for _ in 0..rng.below(params.max_edges + 1) {
        let angle = rng.uniform() * 2.0 * PI;
        let (nx, ny) = (angle.cos(), angle.sin());
        let offset = (rng.uniform() - 0.5) * s * 0.8;
        let step = (rng.uniform() - 0.5) * 100.0;
        for r in 0..size {
            for c in 0..size {
                if (c as f64 - s / 2.0) * nx + (r as f64 - s / 2.0) * ny > offset {
                    field[r * size + c] += step;
                }
            }
        }
    }

    // textured patches: smoothed white noise inside random discs
    let noise: Vec<f64> = (0..size * size).map(|_| rng.normal()).collect();
    let width = [1, 3][rng.below(2)];
    let texture = box_mean_mirror(&Plane::from_vec(size, size, noise), width);
    let gain = params.texture_gain * if width == 1 { 4.0 + rng.uniform() * 10.0 } else { 10.0 + rng.uniform() * 20.0 };
    for _ in 0..1 + rng.below(params.max_patches.max(1)) {
        let (cr, cc) = (rng.uniform() * s, rng.uniform() * s);
        let radius = s * (params.patch_radius.0 + rng.uniform() * (params.patch_radius.1 - params.patch_radius.0));
        for r in 0..size {
            for c in 0..size {
                let d = ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)).sqrt();
                if d < radius {
                    field[r * size + c] += gain * texture.data[r * size + c];
                }
            }
        }
    }

    let sigma = params.noise.0 + rng.uniform() * (params.noise.1 - params.noise.0);
    let pixels = field.iter().map(|v| (v + sigma * rng.normal()).round().clamp(0.0, 255.0) as u8).collect();
    GrayImage::new(size, size, pixels).expect("square image")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = synth_dataset(2, 64, 7).unwrap();
        let b = synth_dataset(2, 64, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        assert_ne!(synth_dataset(1, 64, 8).unwrap()[0], a[0]);
    }

    #[test]
    fn content_is_varied() {
        for img in synth_dataset(20, 64, 3).unwrap() {
            let px = img.to_f64();
            let mean = px.iter().sum::<f64>() / px.len() as f64;
            let var = px.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / px.len() as f64;
            assert!(var > 0.0);
            let mut seen = [false; 256];
            img.pixels().iter().for_each(|&p| seen[p as usize] = true);
            assert!(seen.iter().filter(|&&s| s).count() >= 64);
        }
    }

    #[test]
    fn rejects_degenerate_requests() {
        assert!(synth_dataset(0, 64, 1).is_err());
        assert!(synth_dataset(3, 8, 1).is_err());
    }
}
