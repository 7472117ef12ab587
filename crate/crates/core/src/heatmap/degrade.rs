use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Heatmap, HeatmapStack};
use crate::error::{ensure_non_negative, Result};

/// Simulated image degradations as they appear in backbone heatmaps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationConfig {
    /// Std of additive i.i.d. pixel noise.
    pub noise_sigma: f64,
    /// Std of the Gaussian blur kernel, in pixels.
    pub blur_sigma: f64,
    /// Std of the random per-frame displacement of every heatmap peak, in pixels.
    pub peak_jitter_sigma: f64,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.0,
            blur_sigma: 0.0,
            peak_jitter_sigma: 1.0,
            seed: 0,
        }
    }
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("degradation.noise_sigma", self.noise_sigma)?;
        ensure_non_negative("degradation.blur_sigma", self.blur_sigma)?;
        ensure_non_negative("degradation.peak_jitter_sigma", self.peak_jitter_sigma)
    }
}

/// Adds i.i.d. `N(0, noise_sigma^2)` to every pixel and clamps to `[0, 1]`.
///
/// Draws are taken channel by channel in row-major order from a ChaCha8
/// stream seeded with `seed`. `noise_sigma == 0` returns the input untouched
/// (no clamping either).
pub fn add_gaussian_noise(stack: &HeatmapStack, noise_sigma: f64, seed: u64) -> Result<HeatmapStack> {
    ensure_non_negative("noise_sigma", noise_sigma)?;
    if noise_sigma == 0.0 {
        return Ok(stack.clone());
    }
    let normal = Normal::new(0.0, noise_sigma).expect("sigma validated above");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(stack.map_channels(|map| map.map_values(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))))
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let taps: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) * inv).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian blur with clamp-to-edge borders; `blur_sigma == 0` is the identity.
pub fn gaussian_blur(stack: &HeatmapStack, blur_sigma: f64) -> Result<HeatmapStack> {
    ensure_non_negative("blur_sigma", blur_sigma)?;
    if blur_sigma == 0.0 {
        return Ok(stack.clone());
    }
    let kernel = gaussian_kernel(blur_sigma);
    Ok(stack.map_channels(|map| blur_map(map, &kernel)))
}

fn blur_map(map: &Heatmap, kernel: &[f64]) -> Heatmap {
    let (h, w) = (map.height(), map.width());
    let radius = (kernel.len() / 2) as isize;
    let src = map.values();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let mut horizontal = vec![0.0; h * w];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for c in 0..w {
            horizontal[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(t, k)| k * row[clamp(c as isize + t as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(t, k)| k * horizontal[clamp(r as isize + t as isize - radius, h) * w + c])
                .sum();
        }
    }
    Heatmap::from_raw(h, w, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(h: usize, w: usize, v: f64) -> HeatmapStack {
        HeatmapStack::new(vec![Heatmap::new(h, w, vec![v; h * w]).unwrap()]).unwrap()
    }

    fn spike(h: usize, w: usize, row: usize, col: usize) -> HeatmapStack {
        let map = Heatmap::from_fn(h, w, |r, c| if (r, c) == (row, col) { 1.0 } else { 0.0 }).unwrap();
        HeatmapStack::new(vec![map]).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let stack = constant(4, 5, 1.7);
        assert_eq!(add_gaussian_noise(&stack, 0.0, 9).unwrap(), stack);
    }

    #[test]
    fn noise_is_seeded() {
        let stack = constant(6, 6, 0.5);
        let a = add_gaussian_noise(&stack, 0.2, 42).unwrap();
        let b = add_gaussian_noise(&stack, 0.2, 42).unwrap();
        let c = add_gaussian_noise(&stack, 0.2, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.map(0).values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn empirical_noise_std_matches_nominal() {
        let stack = constant(100, 100, 0.5);
        let noisy = add_gaussian_noise(&stack, 0.1, 7).unwrap();
        let vals = noisy.map(0).values();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 0.1).abs() < 0.01, "std = {std}");
    }

    #[test]
    fn zero_blur_is_identity_and_constants_survive() {
        let stack = spike(7, 7, 3, 3);
        assert_eq!(gaussian_blur(&stack, 0.0).unwrap(), stack);
        let flat = constant(6, 9, 0.3);
        let blurred = gaussian_blur(&flat, 1.3).unwrap();
        for v in blurred.map(0).values() {
            assert!((v - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn blurred_delta_center_is_product_of_center_taps() {
        // sigma = 1: radius 3, taps exp(-i^2/2) / Z for i in -3..=3.
        let z: f64 = (-3i32..=3).map(|i| (-(i * i) as f64 / 2.0).exp()).sum();
        let center = 1.0 / z;
        let blurred = gaussian_blur(&spike(9, 9, 4, 4), 1.0).unwrap();
        assert!((blurred.map(0).get(4, 4) - center * center).abs() < 1e-15);
        let side = (-0.5f64).exp() / z;
        assert!((blurred.map(0).get(4, 5) - center * side).abs() < 1e-15);
    }

    #[test]
    fn interior_blur_preserves_mass() {
        let blurred = gaussian_blur(&spike(21, 21, 10, 10), 1.7).unwrap();
        assert!((blurred.map(0).sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn kernel_radius_and_normalization() {
        let k = gaussian_kernel(1.2);
        assert_eq!(k.len(), 2 * 4 + 1);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
