use rayon::prelude::*;

use super::{ExperimentConfig, SequenceSample};
use crate::convlstm::ConvLstmModel;
use crate::error::{Error, Result};
use crate::heatmap::{HeatmapStack, LandmarkSet};
use crate::metrics::MetricsReport;
use crate::postproc::decode_stack_counted;

/// Environment variable capping evaluation threads.
pub const THREADS_ENV: &str = "STABLE_ALIGN_THREADS";

/// Thread cap from [`THREADS_ENV`], if set to a positive integer.
pub fn thread_limit() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match thread_limit() {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config(THREADS_ENV, e.to_string()))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Metrics for already-computed heatmap sequences (one per sample, frame-aligned).
pub fn evaluate_outputs(outputs: &[Vec<HeatmapStack>], dataset: &[SequenceSample], config: &ExperimentConfig) -> Result<MetricsReport> {
    let decoder = config.decoder.decoder()?;
    let mut fallbacks = 0;
    let mut preds = Vec::with_capacity(outputs.len());
    for (seq, sample) in outputs.iter().zip(dataset) {
        if seq.len() != sample.frames() {
            return Err(Error::shape(format!("{} frames", sample.frames()), seq.len()));
        }
        let track: Vec<LandmarkSet> = seq
            .iter()
            .map(|s| {
                let (lm, n) = decode_stack_counted(s, &decoder);
                fallbacks += n;
                lm
            })
            .collect();
        preds.push(track);
    }
    let truths: Vec<Vec<LandmarkSet>> = dataset.iter().map(|s| s.gt_landmarks.clone()).collect();
    MetricsReport::from_tracks(&preds, &truths, &config.normalization, config.cutoff, config.cvar_offset(), fallbacks)
}

/// Decodes the stabilized heatmaps of `model`, or the raw backbone heatmaps
/// when no model is given, and scores them against the ground truth.
///
/// Every sequence starts from a zero state. Sequences run in parallel; the
/// result does not depend on the thread count.
pub fn evaluate(model: Option<&ConvLstmModel>, dataset: &[SequenceSample], config: &ExperimentConfig) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    if let Some(m) = model {
        let k = dataset[0].backbone_heatmaps[0].landmarks();
        if m.input_channels() != k {
            return Err(Error::shape(format!("model for {k} landmarks"), format!("model for {}", m.input_channels())));
        }
    }
    let outputs: Vec<Vec<HeatmapStack>> = with_pool(|| {
        dataset
            .par_iter()
            .map(|sample| match model {
                Some(m) => m.run_sequence(&sample.backbone_heatmaps),
                None => Ok(sample.backbone_heatmaps.clone()),
            })
            .collect::<Result<Vec<_>>>()
    })??;
    evaluate_outputs(&outputs, dataset, config)
}
