//! Heatmap-to-coordinate decoders.
//!
//! Three decoders are provided: integer argmax, the quarter-offset
//! interpolation rule, and Probability Density Centralization (PDC), a
//! thresholded center of mass. All return 0-based sub-pixel coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::{Heatmap, HeatmapStack, LandmarkSet, Point2};

pub const DEFAULT_PDC_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdcConfig {
    threshold: f64,
}

impl PdcConfig {
    /// Valid thresholds lie in `[0, 1)`.
    pub fn new(threshold: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&threshold) {
            return Err(Error::config(
                "decoder.theta_pdc",
                format!("must lie in [0, 1), got {threshold}"),
            ));
        }
        Ok(Self { threshold })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

impl Default for PdcConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_PDC_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Decoder {
    Argmax,
    Interp,
    Pdc(PdcConfig),
}

impl Default for Decoder {
    fn default() -> Self {
        Decoder::Pdc(PdcConfig::default())
    }
}

impl Decoder {
    /// Decodes one map. Only PDC can fail.
    pub fn decode(&self, map: &Heatmap) -> Result<Point2> {
        match self {
            Decoder::Argmax => Ok(argmax_decode(map)),
            Decoder::Interp => Ok(interp_decode(map)),
            Decoder::Pdc(cfg) => pdc_decode(map, cfg),
        }
    }

    /// Decodes one map, falling back to argmax when PDC finds no mass.
    /// The flag is true when the fallback was taken.
    pub fn decode_or_fallback(&self, map: &Heatmap) -> (Point2, bool) {
        match self.decode(map) {
            Ok(p) => (p, false),
            Err(_) => (argmax_decode(map), true),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Decoder::Argmax => "argmax",
            Decoder::Interp => "interp",
            Decoder::Pdc(_) => "pdc",
        }
    }
}

/// Location of the largest value; ties go to the smallest row, then the smallest column.
pub fn argmax_decode(map: &Heatmap) -> Point2 {
    let (row, col) = argmax_index(map);
    Point2::new(col as f64, row as f64)
}

fn argmax_index(map: &Heatmap) -> (usize, usize) {
    let mut best = 0;
    let values = map.values();
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    (best / map.width(), best % map.width())
}

/// Argmax shifted by a quarter pixel toward the larger neighbor on each axis.
pub fn interp_decode(map: &Heatmap) -> Point2 {
    let (row, col) = argmax_index(map);
    let quarter = |lo: Option<f64>, hi: Option<f64>| match (lo, hi) {
        (Some(lo), Some(hi)) if hi > lo => 0.25,
        (Some(lo), Some(hi)) if lo > hi => -0.25,
        _ => 0.0,
    };
    let (h, w) = (map.height(), map.width());
    let dx = quarter(
        col.checked_sub(1).map(|c| map.get(row, c)),
        (col + 1 < w).then(|| map.get(row, col + 1)),
    );
    let dy = quarter(
        row.checked_sub(1).map(|r| map.get(r, col)),
        (row + 1 < h).then(|| map.get(row + 1, col)),
    );
    Point2::new(col as f64 + dx, row as f64 + dy)
}

/// Probability Density Centralization.
///
/// Values below the threshold are zeroed, column and row sums are weighted by
/// their 1-based index, and the two weighted sums are divided by the remaining
/// mass. The 1-based result is shifted back by one pixel on both axes.
pub fn pdc_decode(map: &Heatmap, cfg: &PdcConfig) -> Result<Point2> {
    let (h, w) = (map.height(), map.width());
    let theta = cfg.threshold;
    let phi: Vec<f64> = map.values().iter().map(|&v| if v < theta { 0.0 } else { v }).collect();

    let sum_phi: f64 = phi.iter().sum();
    if sum_phi <= 0.0 {
        return Err(Error::DegenerateHeatmap { threshold: theta });
    }

    let mut sum_x = 0.0;
    for i in 0..w {
        let column: f64 = (0..h).map(|r| phi[r * w + i]).sum();
        sum_x += (i + 1) as f64 * column;
    }
    let mut sum_y = 0.0;
    for i in 0..h {
        let row: f64 = phi[i * w..(i + 1) * w].iter().sum();
        sum_y += (i + 1) as f64 * row;
    }

    let x = sum_x / sum_phi;
    let y = sum_y / sum_phi;
    Ok(Point2::new(x - 1.0, y - 1.0))
}

/// Decodes every channel, falling back to argmax on degenerate PDC input.
pub fn decode_stack(stack: &HeatmapStack, decoder: &Decoder) -> LandmarkSet {
    decode_stack_counted(stack, decoder).0
}

/// Like [`decode_stack`], also returning how many channels needed the argmax fallback.
pub fn decode_stack_counted(stack: &HeatmapStack, decoder: &Decoder) -> (LandmarkSet, usize) {
    let mut fallbacks = 0;
    let points = stack
        .maps()
        .iter()
        .map(|map| {
            let (p, fell_back) = decoder.decode_or_fallback(map);
            fallbacks += fell_back as usize;
            p
        })
        .collect();
    (LandmarkSet { points }, fallbacks)
}

/// Strict variant of [`decode_stack`] that reports degenerate channels as errors.
pub fn try_decode_stack(stack: &HeatmapStack, decoder: &Decoder) -> Result<LandmarkSet> {
    let points = stack.maps().iter().map(|m| decoder.decode(m)).collect::<Result<Vec<_>>>()?;
    Ok(LandmarkSet { points })
}
