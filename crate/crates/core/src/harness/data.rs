use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{derive_seed, stream, ExperimentConfig};
use crate::error::{Error, Result};
use crate::heatmap::{add_gaussian_noise, gaussian_blur, make_gaussian_heatmap, HeatmapStack, LandmarkSet, Point2};

/// One synthetic video: ground truth plus what the simulated backbone emits.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub gt_landmarks: Vec<LandmarkSet>,
    pub gt_heatmaps: Vec<HeatmapStack>,
    pub backbone_heatmaps: Vec<HeatmapStack>,
    pub seed: u64,
}

impl SequenceSample {
    /// Builds a sample from parts, checking lengths and shapes.
    pub fn new(
        gt_landmarks: Vec<LandmarkSet>,
        gt_heatmaps: Vec<HeatmapStack>,
        backbone_heatmaps: Vec<HeatmapStack>,
        seed: u64,
    ) -> Result<Self> {
        let frames = gt_landmarks.len();
        if frames == 0 {
            return Err(Error::Empty("sequence without frames".into()));
        }
        if gt_heatmaps.len() != frames || backbone_heatmaps.len() != frames {
            return Err(Error::shape(
                format!("{frames} frames everywhere"),
                format!("{} gt / {} backbone heatmap frames", gt_heatmaps.len(), backbone_heatmaps.len()),
            ));
        }
        let reference = &gt_heatmaps[0];
        for (t, ((lm, gt), bb)) in gt_landmarks.iter().zip(&gt_heatmaps).zip(&backbone_heatmaps).enumerate() {
            if !gt.same_shape(reference) || !bb.same_shape(reference) || lm.len() != reference.landmarks() {
                return Err(Error::shape(reference.shape_string(), format!("a different shape at frame {t}")));
            }
        }
        Ok(Self {
            gt_landmarks,
            gt_heatmaps,
            backbone_heatmaps,
            seed,
        })
    }

    pub fn frames(&self) -> usize {
        self.gt_landmarks.len()
    }
}

/// Fractional positions of the first five landmarks: eyes, nose tip, mouth corners.
const TEMPLATE: [(f64, f64); 5] = [(0.34, 0.38), (0.66, 0.38), (0.5, 0.52), (0.39, 0.66), (0.61, 0.66)];

/// Landmark layout of an average face on the configured grid, snapped to pixel centers.
///
/// The first five points follow a fixed eyes/nose/mouth layout; any further
/// points are spread on an ellipse around the grid center.
pub fn face_template(config: &ExperimentConfig) -> LandmarkSet {
    let (w, h) = (config.grid.width as f64, config.grid.height as f64);
    let extra = config.landmarks.saturating_sub(TEMPLATE.len());
    let points = (0..config.landmarks)
        .map(|k| {
            let (fx, fy) = TEMPLATE.get(k).copied().unwrap_or_else(|| {
                let angle = std::f64::consts::TAU * (k - TEMPLATE.len()) as f64 / extra as f64;
                (0.5 + 0.2 * angle.cos(), 0.5 + 0.2 * angle.sin())
            });
            Point2::new((fx * w).round(), (fy * h).round())
        })
        .collect::<Vec<_>>();
    LandmarkSet::from(points)
}

/// A template face with a random integer translation and per-point integer perturbation.
fn random_face(config: &ExperimentConfig, rng: &mut ChaCha8Rng) -> LandmarkSet {
    let template = face_template(config);
    let (dx, dy) = (rng.random_range(-1i32..=1) as f64, rng.random_range(-1i32..=1) as f64);
    let points = template
        .points
        .iter()
        .map(|p| {
            let jx = rng.random_range(-1i32..=1) as f64;
            let jy = rng.random_range(-1i32..=1) as f64;
            Point2::new(p.x + dx + jx, p.y + dy + jy)
        })
        .collect::<Vec<_>>();
    LandmarkSet::from(points)
}

fn check_margin(base: &LandmarkSet, config: &ExperimentConfig, shift_range: usize) -> Result<()> {
    let margin = config.border_margin(shift_range);
    let (w, h) = (config.grid.width as f64, config.grid.height as f64);
    for (index, p) in base.points.iter().enumerate() {
        if p.x < margin || p.y < margin || p.x > w - 1.0 - margin || p.y > h - 1.0 - margin {
            return Err(Error::TooCloseToBorder {
                index,
                x: p.x,
                y: p.y,
                margin,
            });
        }
    }
    Ok(())
}

/// Synthesizes one sequence around `base`.
///
/// The face performs an integer random walk bounded by `shift_range` per axis.
/// The simulated backbone displaces every peak by `N(0, peak_jitter_sigma^2)`
/// per frame and axis, then applies the configured noise and blur.
pub fn generate_sequence(
    base: &LandmarkSet,
    config: &ExperimentConfig,
    shift_range: usize,
    frames: RangeInclusive<usize>,
    seed: u64,
) -> Result<SequenceSample> {
    if frames.is_empty() || *frames.start() == 0 {
        return Err(Error::config("frames", format!("invalid frame range {frames:?}")));
    }
    if base.len() != config.landmarks {
        return Err(Error::shape(format!("{} landmarks", config.landmarks), base.len()));
    }
    check_margin(base, config, shift_range)?;
    let (height, width) = (config.grid.height, config.grid.width);
    let deg = &config.degradation;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = rng.random_range(frames);
    let jitter = Normal::new(0.0, deg.peak_jitter_sigma).map_err(|e| Error::config("degradation.peak_jitter_sigma", e.to_string()))?;
    let range = shift_range as i32;

    let mut shift = (0i32, 0i32);
    let mut gt_landmarks = Vec::with_capacity(frames);
    let mut gt_heatmaps = Vec::with_capacity(frames);
    let mut backbone_heatmaps = Vec::with_capacity(frames);
    for t in 0..frames {
        if t > 0 && range > 0 {
            shift.0 = (shift.0 + rng.random_range(-1..=1)).clamp(-range, range);
            shift.1 = (shift.1 + rng.random_range(-1..=1)).clamp(-range, range);
        }
        let truth = base.translated(shift.0 as f64, shift.1 as f64);
        let displaced = LandmarkSet::from(
            truth
                .points
                .iter()
                .map(|p| {
                    let x = p.x + jitter.sample(&mut rng);
                    let y = p.y + jitter.sample(&mut rng);
                    Point2::new(x.clamp(0.0, width as f64 - 1.0), y.clamp(0.0, height as f64 - 1.0))
                })
                .collect::<Vec<_>>(),
        );
        let gt = make_gaussian_heatmap(&truth, height, width, config.heatmap_sigma)?;
        let clean = make_gaussian_heatmap(&displaced, height, width, config.heatmap_sigma)?;
        let noise_seed = derive_seed(seed ^ deg.seed, stream::NOISE, t as u64);
        let noisy = add_gaussian_noise(&clean, deg.noise_sigma, noise_seed)?;
        let backbone = if deg.blur_sigma > 0.0 {
            gaussian_blur(&noisy, deg.blur_sigma)?
        } else {
            noisy
        };
        gt_landmarks.push(truth);
        gt_heatmaps.push(gt);
        backbone_heatmaps.push(backbone);
    }
    SequenceSample::new(gt_landmarks, gt_heatmaps, backbone_heatmaps, seed)
}

/// How one split of a dataset is drawn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    /// Random stream the per-sequence seeds come from.
    pub stream: u64,
    pub count: usize,
    pub shift_range: usize,
    pub frames: RangeInclusive<usize>,
}

impl ExperimentConfig {
    /// Shift-augmented training sequences.
    pub fn train_split(&self) -> SplitSpec {
        SplitSpec {
            stream: stream::TRAIN,
            count: self.optimizer.sequences_per_epoch,
            shift_range: self.shift_range,
            frames: self.dataset.min_frames..=self.dataset.max_frames,
        }
    }

    /// Evaluation sequences.
    pub fn test_split(&self) -> SplitSpec {
        SplitSpec {
            stream: stream::TEST,
            count: self.dataset.test_sequences,
            shift_range: self.dataset.test_shift_range,
            frames: self.dataset.test_min_frames..=self.dataset.test_max_frames,
        }
    }
}

/// Every sequence of a split, each with its own randomly perturbed face and seed.
pub fn generate_split(config: &ExperimentConfig, spec: &SplitSpec) -> Result<Vec<SequenceSample>> {
    config.validate()?;
    (0..spec.count)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(config.seed, spec.stream, i as u64);
            let mut face_rng = ChaCha8Rng::seed_from_u64(!seed);
            let base = random_face(config, &mut face_rng);
            generate_sequence(&base, config, spec.shift_range, spec.frames.clone(), seed)
        })
        .collect()
}

/// Training sequences (shift-augmented) and evaluation sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
}

pub fn generate_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    Ok(Dataset {
        train: generate_split(config, &config.train_split())?,
        test: generate_split(config, &config.test_split())?,
    })
}
