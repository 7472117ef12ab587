use super::{pixel_loss_into, JitterConfig, StackLossValueGrad};
use crate::error::{Error, Result};
use crate::heatmap::{check_same_len, HeatmapStack, LandmarkSet};

/// Per-landmark norms shared by the modulation term and the jitter criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct JitterTerms {
    /// `|e_t - e_{t-1}|` where `e = predicted - ground truth`.
    pub inconsistency: Vec<f64>,
    /// `|c|` where `c` is the ground-truth motion between the two frames.
    pub gt_offset: Vec<f64>,
}

pub fn jitter_terms(
    pred: &LandmarkSet,
    truth: &LandmarkSet,
    pred_prev: &LandmarkSet,
    truth_prev: &LandmarkSet,
) -> Result<JitterTerms> {
    check_same_len(truth, pred)?;
    check_same_len(truth, pred_prev)?;
    check_same_len(truth, truth_prev)?;
    let mut inconsistency = Vec::with_capacity(truth.len());
    let mut gt_offset = Vec::with_capacity(truth.len());
    for k in 0..truth.len() {
        let e_t = pred.points[k] - truth.points[k];
        let e_prev = pred_prev.points[k] - truth_prev.points[k];
        let c = truth.points[k] - truth_prev.points[k];
        inconsistency.push((e_t.x - e_prev.x).hypot(e_t.y - e_prev.y));
        gt_offset.push(c.x.hypot(c.y));
    }
    Ok(JitterTerms {
        inconsistency,
        gt_offset,
    })
}

impl JitterTerms {
    /// `min(|e_t - e_{t-1}| / (|c| + xi), theta)` per landmark.
    pub fn modulation(&self, theta: f64, xi: f64) -> Vec<f64> {
        self.inconsistency
            .iter()
            .zip(&self.gt_offset)
            .map(|(n, c)| (n / (c + xi)).min(theta))
            .collect()
    }

    /// `|e_t - e_{t-1}| > theta * |c|` per landmark.
    pub fn criterion(&self, theta: f64) -> Vec<bool> {
        self.inconsistency
            .iter()
            .zip(&self.gt_offset)
            .map(|(n, c)| *n > theta * c)
            .collect()
    }
}

/// The clamped modulation term, one value in `[0, theta]` per landmark.
pub fn jitter_modulation(
    pred: &LandmarkSet,
    truth: &LandmarkSet,
    pred_prev: &LandmarkSet,
    truth_prev: &LandmarkSet,
    config: &JitterConfig,
) -> Result<Vec<f64>> {
    Ok(jitter_terms(pred, truth, pred_prev, truth_prev)?.modulation(config.theta, config.xi))
}

/// True for every landmark whose prediction inconsistency exceeds `theta` times the ground-truth motion.
pub fn jitter_criterion(
    pred: &LandmarkSet,
    truth: &LandmarkSet,
    pred_prev: &LandmarkSet,
    truth_prev: &LandmarkSet,
    theta: f64,
) -> Result<Vec<bool>> {
    Ok(jitter_terms(pred, truth, pred_prev, truth_prev)?.criterion(theta))
}

/// Mean over channels of `weights[k] * pixel_loss(pred[k], truth[k])`, gradient included.
///
/// `weights` are constants: nothing is differentiated through them.
pub fn modulated_pixel_loss(
    pred: &HeatmapStack,
    truth: &HeatmapStack,
    weights: &[f64],
    config: &JitterConfig,
) -> Result<StackLossValueGrad> {
    if !pred.same_shape(truth) {
        return Err(Error::shape(truth.shape_string(), pred.shape_string()));
    }
    if weights.len() != pred.landmarks() {
        return Err(Error::shape(format!("{} weights", pred.landmarks()), weights.len()));
    }
    let mut grad = vec![0.0; pred.landmarks() * pred.height() * pred.width()];
    let value = modulated_loss_flat(&pred.to_flat(), &truth.to_flat(), weights, config, &mut grad);
    Ok(StackLossValueGrad {
        value,
        grad: HeatmapStack::from_flat_raw(pred.landmarks(), pred.height(), pred.width(), &grad),
    })
}

/// Flat channel-major variant used by the training loop.
pub(crate) fn modulated_loss_flat(
    pred: &[f64],
    truth: &[f64],
    weights: &[f64],
    config: &JitterConfig,
    grad: &mut [f64],
) -> f64 {
    let channels = weights.len();
    let plane = pred.len() / channels;
    let mut total = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        let range = k * plane..(k + 1) * plane;
        let g = &mut grad[range.clone()];
        let value = pixel_loss_into(config.pixel_loss, config.theta, &pred[range.clone()], &truth[range], g);
        let scale = w / channels as f64;
        g.iter_mut().for_each(|x| *x *= scale);
        total += w * value;
    }
    total / channels as f64
}

/// Jitter loss of one frame pair: per channel `(lambda + psi_k) * pixel_loss`, averaged over channels.
///
/// `pred` / `pred_prev` are the landmarks decoded from the current and previous
/// predicted heatmaps. The modulation term acts as a constant weight in the gradient.
#[allow(clippy::too_many_arguments)]
pub fn jitter_loss(
    heatmaps: &HeatmapStack,
    gt_heatmaps: &HeatmapStack,
    pred: &LandmarkSet,
    truth: &LandmarkSet,
    pred_prev: &LandmarkSet,
    truth_prev: &LandmarkSet,
    config: &JitterConfig,
) -> Result<StackLossValueGrad> {
    if truth.len() != heatmaps.landmarks() {
        return Err(Error::shape(
            format!("{} landmarks", heatmaps.landmarks()),
            format!("{} landmarks", truth.len()),
        ));
    }
    let psi = jitter_modulation(pred, truth, pred_prev, truth_prev, config)?;
    let weights: Vec<f64> = psi.iter().map(|p| config.lambda + p).collect();
    modulated_pixel_loss(heatmaps, gt_heatmaps, &weights, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::{make_gaussian_heatmap, Point2};
    use crate::loss::{grad_check, pixel_loss, PixelLoss};
    use proptest::prelude::*;

    fn set(points: &[(f64, f64)]) -> LandmarkSet {
        LandmarkSet::from(points.iter().map(|&(x, y)| Point2::new(x, y)).collect::<Vec<_>>())
    }

    fn cfg(theta: f64, xi: f64) -> JitterConfig {
        JitterConfig {
            theta,
            xi,
            ..JitterConfig::default()
        }
    }

    /// Builds (pred, truth, pred_prev, truth_prev) from errors and a ground-truth offset.
    fn frames(e_t: (f64, f64), e_prev: (f64, f64), c: (f64, f64)) -> [LandmarkSet; 4] {
        let truth_prev = (5.0, 5.0);
        let truth = (5.0 + c.0, 5.0 + c.1);
        [
            set(&[(truth.0 + e_t.0, truth.1 + e_t.1)]),
            set(&[truth]),
            set(&[(truth_prev.0 + e_prev.0, truth_prev.1 + e_prev.1)]),
            set(&[truth_prev]),
        ]
    }

    fn psi(f: &[LandmarkSet; 4], c: &JitterConfig) -> f64 {
        jitter_modulation(&f[0], &f[1], &f[2], &f[3], c).unwrap()[0]
    }

    #[test]
    fn modulation_hand_values() {
        let f = frames((0.7, -0.2), (0.7, -0.2), (3.0, 1.0));
        assert!(psi(&f, &cfg(1.0, 0.01)).abs() < 1e-12);

        let f = frames((1.0, 0.0), (0.0, 0.0), (2.0, 0.0));
        assert!((psi(&f, &cfg(1.0, 0.01)) - 1.0 / 2.01).abs() < 1e-12);

        let f = frames((5.0, 0.0), (-5.0, 0.0), (0.1, 0.0));
        assert_eq!(psi(&f, &cfg(1.0, 0.01)), 1.0);
    }

    #[test]
    fn criterion_hand_values() {
        let crit = |f: [LandmarkSet; 4], theta| jitter_criterion(&f[0], &f[1], &f[2], &f[3], theta).unwrap()[0];
        assert!(crit(frames((0.1, 0.0), (0.0, 0.0), (0.0, 0.0)), 1.0));
        assert!(!crit(frames((0.4, 0.4), (0.4, 0.4), (0.0, 0.0)), 1.0));
        assert!(!crit(frames((1.0, 0.0), (0.0, 0.0), (2.0, 0.0)), 1.0));
    }

    #[test]
    fn mismatched_landmark_counts_error() {
        let a = set(&[(1.0, 1.0)]);
        let b = set(&[(1.0, 1.0), (2.0, 2.0)]);
        assert!(jitter_modulation(&a, &b, &a, &a, &cfg(1.0, 0.01)).is_err());
        assert!(jitter_criterion(&a, &a, &b, &a, 1.0).is_err());
    }

    fn gt_stack(points: &[(f64, f64)]) -> HeatmapStack {
        make_gaussian_heatmap(&set(points), 12, 12, 1.5).unwrap()
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let truth = gt_stack(&[(5.0, 6.0), (7.5, 4.0)]);
        let lm = set(&[(5.0, 6.0), (7.5, 4.0)]);
        let out = jitter_loss(&truth, &truth, &lm, &lm, &lm, &lm, &JitterConfig::default()).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad.to_flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn clamped_modulation_doubles_the_pixel_loss() {
        let truth = gt_stack(&[(5.0, 6.0)]);
        let pred = gt_stack(&[(6.0, 6.0)]);
        let c = cfg(1.0, 0.01);
        let f = frames((4.0, 0.0), (-4.0, 0.0), (0.0, 0.0));
        let out = jitter_loss(&pred, &truth, &f[0], &f[1], &f[2], &f[3], &c).unwrap();
        let bare = pixel_loss(pred.map(0), truth.map(0), &c).unwrap();
        assert!((out.value - 2.0 * bare.value).abs() < 1e-15);
    }

    #[test]
    fn zero_lambda_without_jitter_vanishes() {
        let truth = gt_stack(&[(5.0, 6.0)]);
        let pred = gt_stack(&[(7.0, 4.0)]);
        let c = JitterConfig {
            lambda: 0.0,
            ..JitterConfig::default()
        };
        let f = frames((2.0, -2.0), (2.0, -2.0), (0.5, 0.0));
        let out = jitter_loss(&pred, &truth, &f[0], &f[1], &f[2], &f[3], &c).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn assembled_gradient_matches_finite_differences() {
        let truth = gt_stack(&[(5.0, 6.0), (3.2, 8.1)]);
        // Keep every residual well away from the kinks of L1, smooth-L1 and Wing.
        let pred_flat: Vec<f64> = truth
            .to_flat()
            .iter()
            .enumerate()
            .map(|(i, v)| v + if i % 3 == 0 { -0.3 } else { 0.05 + 0.002 * (i % 11) as f64 })
            .collect();
        let pred = HeatmapStack::from_flat(2, 12, 12, &pred_flat).unwrap();
        let f = [set(&[(5.6, 6.3), (3.0, 7.1)]), set(&[(5.0, 6.0), (3.2, 8.1)]), set(&[(5.0, 6.2), (3.5, 8.0)]), set(&[(5.0, 5.5), (3.2, 8.0)])];
        for kind in PixelLoss::ALL {
            let c = JitterConfig {
                pixel_loss: kind,
                ..JitterConfig::default()
            };
            let gt_flat = truth.to_flat();
            let worst = grad_check(
                |x| {
                    let stack = HeatmapStack::from_flat(2, 12, 12, x).unwrap();
                    let out = jitter_loss(&stack, &truth, &f[0], &f[1], &f[2], &f[3], &c).unwrap();
                    (out.value, out.grad.to_flat())
                },
                &pred.to_flat(),
                1e-6,
            )
            .unwrap();
            assert!(worst < 1e-4, "{kind:?}: {worst}");
            assert_eq!(gt_flat.len(), 288);
        }
    }

    fn arb_point() -> impl Strategy<Value = (f64, f64)> {
        (-5.0f64..5.0, -5.0f64..5.0)
    }

    proptest! {
        #[test]
        fn modulation_is_clamped_and_isotropic(
            e_t in arb_point(), e_prev in arb_point(), c in arb_point(),
            theta in 0.0f64..3.0, xi in 1e-4f64..0.5,
        ) {
            let conf = cfg(theta, xi);
            let p = psi(&frames(e_t, e_prev, c), &conf);
            prop_assert!((0.0..=theta).contains(&p));
            let swap = |(a, b): (f64, f64)| (b, a);
            let q = psi(&frames(swap(e_t), swap(e_prev), swap(c)), &conf);
            prop_assert_eq!(p, q);
        }

        #[test]
        fn criterion_agrees_with_unclamped_ratio(
            e_t in arb_point(), e_prev in arb_point(), c in arb_point(), theta in 0.1f64..3.0,
        ) {
            let f = frames(e_t, e_prev, c);
            let terms = jitter_terms(&f[0], &f[1], &f[2], &f[3]).unwrap();
            let xi = 1e-9;
            let (n, g) = (terms.inconsistency[0], terms.gt_offset[0]);
            let ratio_exceeds = n / (g + xi) > theta * g / (g + xi);
            prop_assert_eq!(terms.criterion(theta)[0], ratio_exceeds);
        }

        #[test]
        fn larger_inconsistency_never_lowers_the_loss(scale_a in 0.0f64..3.0, extra in 0.0f64..3.0) {
            let truth = gt_stack(&[(5.0, 6.0)]);
            let pred = gt_stack(&[(5.5, 6.5)]);
            let c = cfg(1.0, 0.01);
            let loss = |s: f64| {
                let f = frames((s, 0.0), (0.0, 0.0), (0.5, 0.0));
                jitter_loss(&pred, &truth, &f[0], &f[1], &f[2], &f[3], &c).unwrap().value
            };
            prop_assert!(loss(scale_a + extra) >= loss(scale_a));
        }
    }
}
