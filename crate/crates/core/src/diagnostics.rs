//! Slow, independent reference implementations used to cross-check the fast
//! paths: a brute-force centroid decoder, a central-difference gradient
//! engine, and naive-loop stability/accuracy metrics.
//!
//! They ship with the library so substituted backbones or decoders can be
//! verified the same way the built-in ones are.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::{Heatmap, LandmarkSet, Point2};
use crate::metrics::NormalizationRule;

/// Thresholded center of mass: `sum(v * (col, row)) / sum(v)` over pixels with `v >= threshold`.
pub fn oracle_centroid(map: &Heatmap, threshold: f64) -> Result<Point2> {
    let mut mass = 0.0;
    let mut mx = 0.0;
    let mut my = 0.0;
    for row in 0..map.height() {
        for col in 0..map.width() {
            let v = map.get(row, col);
            if v >= threshold && v > 0.0 {
                mass += v;
                mx += v * col as f64;
                my += v * row as f64;
            }
        }
    }
    if mass <= 0.0 {
        return Err(Error::DegenerateHeatmap { threshold });
    }
    Ok(Point2::new(mx / mass, my / mass))
}

pub const MIN_EPSILON: f64 = 1e-7;
pub const MAX_EPSILON: f64 = 1e-3;

/// Central-difference gradient of `f` at `point`, one component at a time.
pub fn oracle_grad<F>(f: F, point: &[f64], epsilon: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(MIN_EPSILON..=MAX_EPSILON).contains(&epsilon) {
        return Err(Error::config(
            "epsilon",
            format!("must lie in [{MIN_EPSILON:e}, {MAX_EPSILON:e}], got {epsilon}"),
        ));
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + epsilon;
        let plus = f(&x);
        x[i] = orig - epsilon;
        let minus = f(&x);
        x[i] = orig;
        grad.push((plus - minus) / (2.0 * epsilon));
    }
    Ok(grad)
}

/// Stability and accuracy metrics recomputed with explicit loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleMetrics {
    pub nrmse: f64,
    pub mcv: f64,
    pub mav: f64,
}

/// Naive re-derivation of NRMSE, MCV and MAV over a set of videos.
pub fn oracle_metrics(
    preds: &[Vec<LandmarkSet>],
    truths: &[Vec<LandmarkSet>],
    rule: &NormalizationRule,
    cvar_offset: f64,
) -> Result<OracleMetrics> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::Empty("oracle metrics need matching, non-empty video lists".into()));
    }

    let mut nrmse_sum = 0.0;
    let mut frame_count = 0usize;
    for v in 0..preds.len() {
        for t in 0..preds[v].len() {
            let k_count = truths[v][t].len();
            let mut sq = 0.0;
            for k in 0..k_count {
                let dx = preds[v][t].points[k].x - truths[v][t].points[k].x;
                let dy = preds[v][t].points[k].y - truths[v][t].points[k].y;
                sq += dx * dx + dy * dy;
            }
            let norm = rule.normalizer(&truths[v][t])?;
            nrmse_sum += (sq / k_count as f64).sqrt() / norm;
            frame_count += 1;
        }
    }

    let mut mcv_sum = 0.0;
    let mut mav_sum = 0.0;
    for video in preds {
        let frames = video.len();
        if frames < 2 {
            return Err(Error::Degenerate("video with fewer than 2 frames".into()));
        }
        let k_count = video[0].len();
        let mut cvar_sum = 0.0;
        let mut avar_sum = 0.0;
        for k in 0..k_count {
            for axis in 0..2 {
                let coord = |t: usize| {
                    let p = video[t].points[k];
                    if axis == 0 {
                        p.x
                    } else {
                        p.y
                    }
                };
                let mut mean = 0.0;
                for t in 0..frames {
                    mean += coord(t) + cvar_offset;
                }
                mean /= frames as f64;
                if mean == 0.0 {
                    return Err(Error::Degenerate("zero mean".into()));
                }
                let mut ss = 0.0;
                for t in 0..frames {
                    ss += (coord(t) + cvar_offset - mean).powi(2);
                }
                cvar_sum += (ss / (frames - 1) as f64).sqrt() / mean;

                let mut diff = 0.0;
                for t in 1..frames {
                    diff += (coord(t) - coord(t - 1)).powi(2);
                }
                avar_sum += diff / (2.0 * (frames - 1) as f64);
            }
        }
        mcv_sum += cvar_sum / (2 * k_count) as f64;
        mav_sum += avar_sum / (2 * k_count) as f64;
    }

    Ok(OracleMetrics {
        nrmse: 100.0 * nrmse_sum / frame_count as f64,
        mcv: mcv_sum / preds.len() as f64,
        mav: mav_sum / preds.len() as f64,
    })
}

/// Outcome of a fast-path versus oracle comparison run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub max_abs_discrepancy: f64,
    pub max_rel_discrepancy: f64,
    pub n_cases: usize,
    pub worst_case_seed: u64,
}

impl OracleReport {
    /// Runs `case(seed)` for every seed; each case returns `(fast, oracle)` value pairs.
    pub fn run<I, F>(seeds: I, mut case: F) -> Result<Self>
    where
        I: IntoIterator<Item = u64>,
        F: FnMut(u64) -> Result<Vec<(f64, f64)>>,
    {
        let mut report = OracleReport {
            max_abs_discrepancy: 0.0,
            max_rel_discrepancy: 0.0,
            n_cases: 0,
            worst_case_seed: 0,
        };
        for seed in seeds {
            for (fast, oracle) in case(seed)? {
                let abs = (fast - oracle).abs();
                if !abs.is_finite() {
                    return Err(Error::NonFinite {
                        what: format!("oracle comparison at seed {seed}"),
                    });
                }
                if abs > report.max_abs_discrepancy {
                    report.max_abs_discrepancy = abs;
                    report.worst_case_seed = seed;
                }
                report.max_rel_discrepancy = report.max_rel_discrepancy.max(abs / oracle.abs().max(1.0));
            }
            report.n_cases += 1;
        }
        if report.n_cases == 0 {
            return Err(Error::Empty("oracle run without cases".into()));
        }
        Ok(report)
    }
}
