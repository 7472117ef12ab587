use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, stream, ExperimentConfig, SequenceSample};
use crate::convlstm::{adam_step, AdamState, ConvLstmModel, Tensor3};
use crate::error::{Error, Result};
use crate::heatmap::LandmarkSet;
use crate::loss::{jitter_modulation, modulated_loss_flat, JitterConfig};
use crate::postproc::{decode_stack_counted, Decoder};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-sequence loss over the epoch, measured before each update.
    pub loss: f64,
    pub decode_fallbacks: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ConvLstmModel,
    pub history: Vec<EpochStats>,
}

/// The identity-initialized model used as the starting point of every run.
pub fn initial_model(config: &ExperimentConfig) -> Result<ConvLstmModel> {
    ConvLstmModel::new(config.landmarks, config.model, derive_seed(config.seed, stream::MODEL_INIT, 0))
}

/// Loss and output gradients for one sequence.
fn sequence_loss(
    outputs: &[crate::heatmap::HeatmapStack],
    sample: &SequenceSample,
    config: &ExperimentConfig,
    decoder: &Decoder,
    jitter: &JitterConfig,
) -> Result<(f64, Vec<Tensor3>, usize)> {
    let frames = outputs.len();
    let k = config.landmarks;
    let mut fallbacks = 0;
    let decoded: Vec<LandmarkSet> = outputs
        .iter()
        .map(|s| {
            let (lm, n) = decode_stack_counted(s, decoder);
            fallbacks += n;
            lm
        })
        .collect();

    let mut total = 0.0;
    let mut grads = Vec::with_capacity(frames);
    for t in 0..frames {
        let weights = match (config.loss.kind.plain_pixel_loss(), t) {
            (Some(_), _) => vec![1.0; k],
            (None, 0) => vec![jitter.lambda; k],
            (None, _) => jitter_modulation(
                &decoded[t],
                &sample.gt_landmarks[t],
                &decoded[t - 1],
                &sample.gt_landmarks[t - 1],
                jitter,
            )?
            .into_iter()
            .map(|psi| jitter.lambda + psi)
            .collect(),
        };
        let pred = outputs[t].to_flat();
        let truth = sample.gt_heatmaps[t].to_flat();
        let mut grad = vec![0.0; pred.len()];
        total += modulated_loss_flat(&pred, &truth, &weights, jitter, &mut grad);
        grad.iter_mut().for_each(|g| *g /= frames as f64);
        grads.push(Tensor3 {
            channels: k,
            height: outputs[t].height(),
            width: outputs[t].width(),
            data: grad,
        });
    }
    Ok((total / frames as f64, grads, fallbacks))
}

/// Fine-tunes the stabilizer on `dataset`.
///
/// Each sequence starts from a zero state; its loss is the mean over frames
/// of the configured objective (frame 1 only carries the `lambda`-weighted
/// pixel term under the jitter loss). One Adam step follows each sequence.
/// The visiting order is reshuffled every epoch from the experiment seed.
pub fn finetune(model: ConvLstmModel, dataset: &[SequenceSample], config: &ExperimentConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if model.input_channels() != config.landmarks {
        return Err(Error::shape(format!("{} landmarks", config.landmarks), model.input_channels()));
    }
    let decoder = config.decoder.decoder()?;
    let jitter = config.loss.jitter_config();
    let mut model = model;
    let mut adam = AdamState::new(model.num_params(), config.optimizer.adam())?;
    let mut params = model.params().to_vec();
    let mut history = Vec::with_capacity(config.optimizer.epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..config.optimizer.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream::ORDER, epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_fallbacks = 0;
        for &index in &order {
            let sample = &dataset[index];
            let (outputs, caches) = model.forward_with_caches(&sample.backbone_heatmaps)?;
            let (loss, grad_outputs, fallbacks) = sequence_loss(&outputs, sample, config, &decoder, &jitter)?;
            if !loss.is_finite() {
                return Err(Error::NumericalFailure { epoch, sequence: index });
            }
            let grad = model.backward_through_time(&caches, &grad_outputs)?;
            adam_step(&mut params, &grad, &mut adam).map_err(|_| Error::NumericalFailure { epoch, sequence: index })?;
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::NumericalFailure { epoch, sequence: index });
            }
            model.set_params(&params)?;
            epoch_loss += loss;
            epoch_fallbacks += fallbacks;
        }
        history.push(EpochStats {
            epoch,
            loss: epoch_loss / dataset.len() as f64,
            decode_fallbacks: epoch_fallbacks,
        });
    }
    Ok(TrainOutcome { model, history })
}
