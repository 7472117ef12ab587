//! Accuracy metrics (NME, NRMSE, failure rate, CED area) and the stability
//! metrics: mean coefficient of variation (MCV) and mean Allan variance (MAV).
//!
//! A "video" here is the landmark track of one sequence: one [`LandmarkSet`]
//! per frame, all with the same number of landmarks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::{check_same_len, LandmarkSet};

pub const DEFAULT_CUTOFF: f64 = 0.10;

/// How landmark errors are normalized into a face-scale-free quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum NormalizationRule {
    /// Distance between two ground-truth landmarks (the eyes).
    InterOcular { left: usize, right: usize },
    /// Diagonal of a fixed bounding box.
    BoxDiagonal { width: f64, height: f64 },
    Fixed { value: f64 },
}

impl Default for NormalizationRule {
    fn default() -> Self {
        NormalizationRule::InterOcular { left: 0, right: 1 }
    }
}

impl NormalizationRule {
    pub fn normalizer(&self, truth: &LandmarkSet) -> Result<f64> {
        let value = match *self {
            NormalizationRule::InterOcular { left, right } => {
                let (Some(l), Some(r)) = (truth.points.get(left), truth.points.get(right)) else {
                    return Err(Error::config(
                        "normalization",
                        format!("eye indices ({left}, {right}) out of range for {} landmarks", truth.len()),
                    ));
                };
                l.distance(*r)
            }
            NormalizationRule::BoxDiagonal { width, height } => width.hypot(height),
            NormalizationRule::Fixed { value } => value,
        };
        if value.is_finite() && value > 0.0 {
            Ok(value)
        } else {
            Err(Error::config("normalization", format!("normalizer must be > 0, got {value}")))
        }
    }
}

fn point_errors(pred: &LandmarkSet, truth: &LandmarkSet) -> Result<Vec<f64>> {
    check_same_len(truth, pred)?;
    if truth.is_empty() {
        return Err(Error::Empty("no landmarks".into()));
    }
    Ok(pred.points.iter().zip(&truth.points).map(|(p, t)| p.distance(*t)).collect())
}

/// Mean landmark error divided by the normalizer, times 100.
pub fn nme(pred: &LandmarkSet, truth: &LandmarkSet, rule: &NormalizationRule) -> Result<f64> {
    let errors = point_errors(pred, truth)?;
    let norm = rule.normalizer(truth)?;
    Ok(100.0 * errors.iter().sum::<f64>() / (errors.len() as f64 * norm))
}

/// Per frame, the root mean square of the landmark errors divided by the
/// normalizer; averaged over frames and times 100.
pub fn nrmse_sequence(preds: &[LandmarkSet], truths: &[LandmarkSet], rule: &NormalizationRule) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Empty("nrmse needs at least one frame".into()));
    }
    if preds.len() != truths.len() {
        return Err(Error::shape(format!("{} frames", truths.len()), format!("{} frames", preds.len())));
    }
    let mut total = 0.0;
    for (pred, truth) in preds.iter().zip(truths) {
        total += frame_nrmse(pred, truth, rule)?;
    }
    Ok(100.0 * total / preds.len() as f64)
}

fn frame_nrmse(pred: &LandmarkSet, truth: &LandmarkSet, rule: &NormalizationRule) -> Result<f64> {
    let errors = point_errors(pred, truth)?;
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64;
    Ok(mse.sqrt() / rule.normalizer(truth)?)
}

/// Fraction of samples whose NME (as a fraction, not percent) exceeds `cutoff`.
pub fn failure_rate(nme_values: &[f64], cutoff: f64) -> Result<f64> {
    if nme_values.is_empty() {
        return Err(Error::Empty("failure rate needs at least one sample".into()));
    }
    let failures = nme_values.iter().filter(|&&e| e > cutoff).count();
    Ok(failures as f64 / nme_values.len() as f64)
}

/// Area under the cumulative error distribution on `[0, cutoff]`, divided by `cutoff`.
///
/// The CED is a step function, so the integral is exact: each sample
/// contributes `max(0, cutoff - e) / cutoff`.
pub fn auc_ced(nme_values: &[f64], cutoff: f64) -> Result<f64> {
    if nme_values.is_empty() {
        return Err(Error::Empty("AUC needs at least one sample".into()));
    }
    if cutoff.is_nan() || cutoff <= 0.0 {
        return Err(Error::config("cutoff", format!("must be > 0, got {cutoff}")));
    }
    let area: f64 = nme_values.iter().map(|&e| (cutoff - e.max(0.0)).max(0.0)).sum();
    Ok(area / (cutoff * nme_values.len() as f64))
}

/// Sample standard deviation (N - 1 denominator) over the mean.
pub fn cvar(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Degenerate(format!("CVar needs N >= 2, got {}", samples.len())));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(Error::Degenerate("CVar is undefined at zero mean".into()));
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt() / mean)
}

/// Allan variance of a series: mean squared successive difference over two.
pub fn avar(series: &[f64]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::Degenerate(format!("AVar needs T >= 2, got {}", series.len())));
    }
    let sum: f64 = series.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    Ok(sum / (2.0 * (series.len() - 1) as f64))
}

fn check_video(video: &[LandmarkSet]) -> Result<usize> {
    let first = video
        .first()
        .ok_or_else(|| Error::Empty("video without frames".into()))?;
    if video.len() < 2 {
        return Err(Error::Degenerate("stability metrics need at least 2 frames".into()));
    }
    for frame in video {
        check_same_len(first, frame)?;
    }
    Ok(first.len())
}

/// Coordinate series of one landmark along one axis (0 = x, 1 = y).
fn axis_series(video: &[LandmarkSet], k: usize, axis: usize, offset: f64) -> Vec<f64> {
    video
        .iter()
        .map(|f| offset + if axis == 0 { f.points[k].x } else { f.points[k].y })
        .collect()
}

/// Per-landmark CVar of a video, averaged over the two axes. Coordinates are
/// shifted by `offset` first to keep the mean away from zero.
pub fn video_cvar_per_landmark(video: &[LandmarkSet], offset: f64) -> Result<Vec<f64>> {
    let k_count = check_video(video)?;
    (0..k_count)
        .map(|k| Ok((cvar(&axis_series(video, k, 0, offset))? + cvar(&axis_series(video, k, 1, offset))?) / 2.0))
        .collect()
}

pub fn video_cvar(video: &[LandmarkSet], offset: f64) -> Result<f64> {
    Ok(mean(&video_cvar_per_landmark(video, offset)?))
}

/// Mean over videos of the per-video CVar.
pub fn mcv(videos: &[Vec<LandmarkSet>], offset: f64) -> Result<f64> {
    if videos.is_empty() {
        return Err(Error::Empty("MCV needs at least one video".into()));
    }
    let per_video = videos.iter().map(|v| video_cvar(v, offset)).collect::<Result<Vec<_>>>()?;
    Ok(mean(&per_video))
}

/// Per-landmark AVar of a video, averaged over the two axes.
pub fn video_avar_per_landmark(video: &[LandmarkSet]) -> Result<Vec<f64>> {
    let k_count = check_video(video)?;
    (0..k_count)
        .map(|k| Ok((avar(&axis_series(video, k, 0, 0.0))? + avar(&axis_series(video, k, 1, 0.0))?) / 2.0))
        .collect()
}

/// AVar averaged across landmarks, axes and videos.
pub fn mav(videos: &[Vec<LandmarkSet>]) -> Result<f64> {
    if videos.is_empty() {
        return Err(Error::Empty("MAV needs at least one video".into()));
    }
    let per_video = videos
        .iter()
        .map(|v| Ok(mean(&video_avar_per_landmark(v)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&per_video))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per-landmark breakdown of the headline metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerLandmark {
    pub nme: Vec<f64>,
    pub mcv: Vec<f64>,
    pub mav: Vec<f64>,
}

/// Full evaluation summary. Stability metrics are in pixels (MAV in px^2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean NME over frames, percent.
    pub nme: f64,
    /// NRMSE averaged over all frames, percent.
    pub nrmse: f64,
    /// Failure rate at the cutoff, in `[0, 1]`.
    pub fr: f64,
    /// CED area up to the cutoff, in `[0, 1]`.
    pub auc: f64,
    pub mcv: f64,
    pub mav: f64,
    pub cutoff: f64,
    pub cvar_offset: f64,
    pub sequences: usize,
    pub frames: usize,
    pub decode_fallbacks: usize,
    pub units: String,
    pub per_landmark: PerLandmark,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "nme,nrmse,fr,auc,mcv,mav,cutoff,cvar_offset,sequences,frames,decode_fallbacks";

    /// Computes every metric from decoded tracks and their ground truth.
    pub fn from_tracks(
        preds: &[Vec<LandmarkSet>],
        truths: &[Vec<LandmarkSet>],
        rule: &NormalizationRule,
        cutoff: f64,
        cvar_offset: f64,
        decode_fallbacks: usize,
    ) -> Result<Self> {
        if preds.is_empty() {
            return Err(Error::Empty("no sequences to evaluate".into()));
        }
        if preds.len() != truths.len() {
            return Err(Error::shape(format!("{} sequences", truths.len()), preds.len()));
        }
        let k_count = truths[0].first().map_or(0, LandmarkSet::len);
        let mut frame_nmes = Vec::new();
        let mut nrmse_total = 0.0;
        let mut landmark_nme = vec![0.0; k_count];
        for (pv, tv) in preds.iter().zip(truths) {
            if pv.len() != tv.len() {
                return Err(Error::shape(format!("{} frames", tv.len()), pv.len()));
            }
            for (p, t) in pv.iter().zip(tv) {
                let errors = point_errors(p, t)?;
                if errors.len() != k_count {
                    return Err(Error::shape(format!("{k_count} landmarks"), errors.len()));
                }
                let norm = rule.normalizer(t)?;
                for (acc, e) in landmark_nme.iter_mut().zip(&errors) {
                    *acc += 100.0 * e / norm;
                }
                frame_nmes.push(mean(&errors) / norm);
                nrmse_total += frame_nrmse(p, t, rule)?;
            }
        }
        let frames = frame_nmes.len();
        landmark_nme.iter_mut().for_each(|v| *v /= frames as f64);

        let mut landmark_mcv = vec![0.0; k_count];
        let mut landmark_mav = vec![0.0; k_count];
        for video in preds {
            for (acc, v) in landmark_mcv.iter_mut().zip(video_cvar_per_landmark(video, cvar_offset)?) {
                *acc += v / preds.len() as f64;
            }
            for (acc, v) in landmark_mav.iter_mut().zip(video_avar_per_landmark(video)?) {
                *acc += v / preds.len() as f64;
            }
        }

        Ok(Self {
            nme: 100.0 * mean(&frame_nmes),
            nrmse: 100.0 * nrmse_total / frames as f64,
            fr: failure_rate(&frame_nmes, cutoff)?,
            auc: auc_ced(&frame_nmes, cutoff)?,
            mcv: mcv(preds, cvar_offset)?,
            mav: mav(preds)?,
            cutoff,
            cvar_offset,
            sequences: preds.len(),
            frames,
            decode_fallbacks,
            units: "pixels".into(),
            per_landmark: PerLandmark {
                nme: landmark_nme,
                mcv: landmark_mcv,
                mav: landmark_mav,
            },
        })
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.nme,
            self.nrmse,
            self.fr,
            self.auc,
            self.mcv,
            self.mav,
            self.cutoff,
            self.cvar_offset,
            self.sequences,
            self.frames,
            self.decode_fallbacks
        )
    }
}
