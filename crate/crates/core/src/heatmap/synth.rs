use super::{check_dims, Heatmap, HeatmapStack, LandmarkSet};
use crate::error::{ensure_positive, Error, Result};

/// Default ground-truth heatmap spread in pixels.
pub const DEFAULT_HEATMAP_SIGMA: f64 = 1.5;

/// Renders one unnormalized Gaussian bump per landmark.
///
/// Channel `k` holds `exp(-((x - x_k)^2 + (y - y_k)^2) / (2 sigma^2))` sampled at
/// pixel centers, so a landmark sitting exactly on a pixel gives a peak of 1.0.
pub fn make_gaussian_heatmap(
    landmarks: &LandmarkSet,
    height: usize,
    width: usize,
    sigma: f64,
) -> Result<HeatmapStack> {
    ensure_positive("heatmap_sigma", sigma)?;
    check_dims(height, width)?;
    if landmarks.is_empty() {
        return Err(Error::Empty("no landmarks to render".into()));
    }
    for (index, p) in landmarks.points.iter().enumerate() {
        let inside = p.x >= 0.0 && p.x < width as f64 && p.y >= 0.0 && p.y < height as f64;
        if !inside {
            return Err(Error::OutOfBounds {
                index,
                x: p.x,
                y: p.y,
                width,
                height,
            });
        }
    }

    let inv = 1.0 / (2.0 * sigma * sigma);
    let maps = landmarks
        .points
        .iter()
        .map(|p| {
            // Separable: exp(-(dx^2 + dy^2) k) = exp(-dx^2 k) * exp(-dy^2 k).
            let gx: Vec<f64> = (0..width).map(|c| (-(c as f64 - p.x).powi(2) * inv).exp()).collect();
            let gy: Vec<f64> = (0..height).map(|r| (-(r as f64 - p.y).powi(2) * inv).exp()).collect();
            let mut values = Vec::with_capacity(height * width);
            for wy in &gy {
                values.extend(gx.iter().map(|wx| wy * wx));
            }
            Heatmap::from_raw(height, width, values)
        })
        .collect();
    HeatmapStack::new(maps)
}
