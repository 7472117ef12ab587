//! Pixel losses, the jitter modulation term and the assembled jitter loss.
//!
//! Every pixel loss is reduced by the mean over pixels and returns its
//! gradient with respect to the predicted heatmap.

mod jitter;

pub use jitter::{
    jitter_criterion, jitter_loss, jitter_modulation, jitter_terms, modulated_pixel_loss, JitterTerms,
};

pub(crate) use jitter::modulated_loss_flat;

use serde::{Deserialize, Serialize};

use crate::diagnostics::oracle_grad;
use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::heatmap::{Heatmap, HeatmapStack};

pub const DEFAULT_THETA: f64 = 1.0;
pub const DEFAULT_XI: f64 = 0.01;
pub const DEFAULT_LAMBDA: f64 = 1.0;

pub const WING_OMEGA: f64 = 10.0;
pub const WING_EPSILON: f64 = 2.0;
pub const AWING_OMEGA: f64 = 14.0;
pub const AWING_EPSILON: f64 = 1.0;
pub const AWING_ALPHA: f64 = 2.1;
pub const AWING_THETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelLoss {
    L2,
    L1,
    #[serde(rename = "smoothl1")]
    SmoothL1,
    Wing,
    #[serde(rename = "awing")]
    AWing,
    #[serde(rename = "gm")]
    GemanMcClure,
}

impl PixelLoss {
    pub const ALL: [PixelLoss; 6] = [
        PixelLoss::L2,
        PixelLoss::L1,
        PixelLoss::SmoothL1,
        PixelLoss::Wing,
        PixelLoss::AWing,
        PixelLoss::GemanMcClure,
    ];

    /// Per-pixel value and derivative with respect to the prediction, for the
    /// residual `d = pred - truth`. `theta` is only read by Geman-McClure.
    pub fn pointwise(self, d: f64, truth: f64, theta: f64) -> (f64, f64) {
        let a = d.abs();
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        match self {
            PixelLoss::L2 => (d * d, 2.0 * d),
            PixelLoss::L1 => (a, sign),
            PixelLoss::SmoothL1 => {
                if a < 1.0 {
                    (0.5 * d * d, d)
                } else {
                    (a - 0.5, sign)
                }
            }
            PixelLoss::Wing => {
                if a < WING_OMEGA {
                    (
                        WING_OMEGA * (1.0 + a / WING_EPSILON).ln(),
                        sign * WING_OMEGA / (WING_EPSILON + a),
                    )
                } else {
                    let c = WING_OMEGA - WING_OMEGA * (1.0 + WING_OMEGA / WING_EPSILON).ln();
                    (a - c, sign)
                }
            }
            PixelLoss::AWing => {
                let p = AWING_ALPHA - truth;
                if a < AWING_THETA {
                    let r = a / AWING_EPSILON;
                    let rp = r.powf(p);
                    let grad = if a == 0.0 {
                        0.0
                    } else {
                        AWING_OMEGA * p * r.powf(p - 1.0) / (AWING_EPSILON * (1.0 + rp))
                    };
                    (AWING_OMEGA * rp.ln_1p(), sign * grad)
                } else {
                    let q = AWING_THETA / AWING_EPSILON;
                    let qp = q.powf(p);
                    let slope = AWING_OMEGA * (1.0 / (1.0 + qp)) * p * q.powf(p - 1.0) / AWING_EPSILON;
                    let c = AWING_THETA * slope - AWING_OMEGA * qp.ln_1p();
                    (slope * a - c, sign * slope)
                }
            }
            PixelLoss::GemanMcClure => gm_pointwise(d, theta),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PixelLoss::L2 => "l2",
            PixelLoss::L1 => "l1",
            PixelLoss::SmoothL1 => "smoothl1",
            PixelLoss::Wing => "wing",
            PixelLoss::AWing => "awing",
            PixelLoss::GemanMcClure => "gm",
        }
    }
}

/// `d^2 / (d^2 + theta^2)` and its derivative `2 d theta^2 / (d^2 + theta^2)^2`.
///
/// At `theta == 0` the loss is the step function `[d != 0]` with zero gradient.
fn gm_pointwise(d: f64, theta: f64) -> (f64, f64) {
    let t2 = theta * theta;
    if t2 == 0.0 {
        // Degenerate scale: a unit step at the origin. Handled apart because
        // d^2 and den^2 underflow for the tiny residuals of Gaussian tails.
        return (if d == 0.0 { 0.0 } else { 1.0 }, 0.0);
    }
    let d2 = d * d;
    let den = d2 + t2;
    (d2 / den, 2.0 * d * (t2 / den) / den)
}

/// Hyperparameters of the jitter loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterConfig {
    /// Clamp on the modulation term and scale of the Geman-McClure pixel loss.
    pub theta: f64,
    /// Regularizer added to the ground-truth offset norm.
    pub xi: f64,
    /// Weight of the unmodulated pixel term.
    pub lambda: f64,
    pub pixel_loss: PixelLoss,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self {
            theta: DEFAULT_THETA,
            xi: DEFAULT_XI,
            lambda: DEFAULT_LAMBDA,
            pixel_loss: PixelLoss::GemanMcClure,
        }
    }
}

impl JitterConfig {
    pub fn validate(&self) -> Result<()> {
        // theta = 0 is admitted so the sweep grid can include it; it switches
        // the modulation off and flattens Geman-McClure to a zero-gradient step.
        ensure_non_negative("loss.theta", self.theta)?;
        ensure_positive("loss.xi", self.xi)?;
        ensure_non_negative("loss.lambda", self.lambda)
    }
}

/// Loss value and its gradient with respect to the predicted heatmap.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    pub grad: Heatmap,
}

/// Loss value and gradient for a whole stack of channels.
#[derive(Debug, Clone, PartialEq)]
pub struct StackLossValueGrad {
    pub value: f64,
    pub grad: HeatmapStack,
}

/// Mean pixel loss over two equally long slices; the gradient is written into `grad`.
pub(crate) fn pixel_loss_into(
    kind: PixelLoss,
    theta: f64,
    pred: &[f64],
    truth: &[f64],
    grad: &mut [f64],
) -> f64 {
    debug_assert!(pred.len() == truth.len() && pred.len() == grad.len());
    let n = pred.len() as f64;
    let mut total = 0.0;
    for ((g, &p), &t) in grad.iter_mut().zip(pred).zip(truth) {
        let (v, dv) = kind.pointwise(p - t, t, theta);
        total += v;
        *g = dv / n;
    }
    total / n
}

fn check_maps(pred: &Heatmap, truth: &Heatmap) -> Result<()> {
    if !pred.same_shape(truth) {
        return Err(Error::shape(
            format!("{}x{}", truth.height(), truth.width()),
            format!("{}x{}", pred.height(), pred.width()),
        ));
    }
    Ok(())
}

fn map_loss(kind: PixelLoss, theta: f64, pred: &Heatmap, truth: &Heatmap) -> Result<LossValueGrad> {
    check_maps(pred, truth)?;
    let mut grad = vec![0.0; pred.values().len()];
    let value = pixel_loss_into(kind, theta, pred.values(), truth.values(), &mut grad);
    Ok(LossValueGrad {
        value,
        grad: Heatmap::from_raw(pred.height(), pred.width(), grad),
    })
}

/// Geman-McClure loss parameterized by the jitter threshold.
pub fn gm_pixel_loss(pred: &Heatmap, truth: &Heatmap, theta: f64) -> Result<LossValueGrad> {
    ensure_non_negative("loss.theta", theta)?;
    map_loss(PixelLoss::GemanMcClure, theta, pred, truth)
}

/// Dispatches on `config.pixel_loss`.
pub fn pixel_loss(pred: &Heatmap, truth: &Heatmap, config: &JitterConfig) -> Result<LossValueGrad> {
    map_loss(config.pixel_loss, config.theta, pred, truth)
}

/// Largest discrepancy between an analytic gradient and central differences,
/// measured as `|analytic - numeric| / max(1, |numeric|)`.
///
/// `loss` maps a point to its value and analytic gradient.
pub fn grad_check<F>(loss: F, point: &[f64], epsilon: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss(point);
    if analytic.len() != point.len() {
        return Err(Error::shape(point.len(), analytic.len()));
    }
    let numeric = oracle_grad(|x| loss(x).0, point, epsilon)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max))
}
