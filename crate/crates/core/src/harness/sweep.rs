use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{evaluate, finetune, generate_dataset, generate_split, initial_model, Dataset, ExperimentConfig, LossKind};
use crate::convlstm::ConvLstmModel;
use crate::error::{Error, Result};

pub const DEFAULT_THETA_GRID: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];
pub const DEFAULT_THETA_PDC_GRID: [f64; 5] = [0.0, 0.1, 0.2, 0.4, 0.6];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaRow {
    pub theta: f64,
    pub nrmse: f64,
    pub mcv: f64,
    pub mav: f64,
    pub nrmse_x_mcv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaPdcRow {
    pub theta_pdc: f64,
    pub nrmse: f64,
    pub mcv: f64,
    pub mav: f64,
    pub nrmse_x_mav: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub noise_sigma: f64,
    pub blur_sigma: f64,
    pub method: String,
    pub nrmse: f64,
    pub mcv: f64,
    pub mav: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSurfacePoint {
    pub e_t: f64,
    pub e_prev: f64,
    /// `lambda * (rho(e_t) + rho(e_prev))`.
    pub pixel_term: f64,
    /// `|e_t - e_prev| * (rho(e_t) + rho(e_prev))`.
    pub modulated_term: f64,
    pub total: f64,
}

/// Noise and blur levels of the robustness protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessLevels {
    pub noise: Vec<f64>,
    pub blur: Vec<f64>,
}

impl Default for RobustnessLevels {
    fn default() -> Self {
        Self {
            noise: vec![0.0, 0.05, 0.1, 0.2],
            blur: vec![0.0, 1.0, 2.0],
        }
    }
}

impl RobustnessLevels {
    pub fn validate(&self) -> Result<()> {
        for (key, levels) in [("levels.noise", &self.noise), ("levels.blur", &self.blur)] {
            if levels.len() < 2 {
                return Err(Error::config(key, "need at least 2 levels"));
            }
            if levels.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::config(key, "levels must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

fn check_grid(key: &str, values: &[f64]) -> Result<()> {
    if values.len() < 3 {
        return Err(Error::config(key, format!("a sweep needs at least 3 values, got {}", values.len())));
    }
    Ok(())
}

/// Trains with the jitter loss at every `theta` on one fixed dataset and reports `NRMSE * MCV`.
pub fn sweep_theta(values: &[f64], config: &ExperimentConfig) -> Result<Vec<ThetaRow>> {
    check_grid("theta", values)?;
    let data = generate_dataset(config)?;
    values
        .iter()
        .map(|&theta| {
            let mut cfg = config.clone();
            cfg.loss.kind = LossKind::Jitter;
            cfg.loss.theta = theta;
            let report = train_and_evaluate(&data, &cfg)?;
            Ok(ThetaRow {
                theta,
                nrmse: report.nrmse,
                mcv: report.mcv,
                mav: report.mav,
                nrmse_x_mcv: report.nrmse * report.mcv,
            })
        })
        .collect()
}

/// Trains and evaluates with the PDC decoder at every threshold and reports `NRMSE * MAV`.
pub fn sweep_theta_pdc(values: &[f64], config: &ExperimentConfig) -> Result<Vec<ThetaPdcRow>> {
    check_grid("theta_pdc", values)?;
    let data = generate_dataset(config)?;
    values
        .iter()
        .map(|&theta_pdc| {
            let mut cfg = config.clone();
            cfg.decoder.kind = super::DecoderKind::Pdc;
            cfg.decoder.theta_pdc = theta_pdc;
            let report = train_and_evaluate(&data, &cfg)?;
            Ok(ThetaPdcRow {
                theta_pdc,
                nrmse: report.nrmse,
                mcv: report.mcv,
                mav: report.mav,
                nrmse_x_mav: report.nrmse * report.mav,
            })
        })
        .collect()
}

fn train_and_evaluate(data: &Dataset, config: &ExperimentConfig) -> Result<crate::metrics::MetricsReport> {
    let outcome = finetune(initial_model(config)?, &data.train, config)?;
    evaluate(Some(&outcome.model), &data.test, config)
}

/// Scores `model` and the raw backbone on static-face test sets at every noise/blur level.
pub fn robustness_table(model: &ConvLstmModel, levels: &RobustnessLevels, config: &ExperimentConfig) -> Result<Vec<RobustnessRow>> {
    levels.validate()?;
    let mut rows = Vec::with_capacity(2 * levels.noise.len() * levels.blur.len());
    for &noise_sigma in &levels.noise {
        for &blur_sigma in &levels.blur {
            let mut cfg = config.clone();
            cfg.degradation.noise_sigma = noise_sigma;
            cfg.degradation.blur_sigma = blur_sigma;
            let test = generate_split(&cfg, &cfg.test_split())?;
            for (method, m) in [("baseline", None), ("finetuned", Some(model))] {
                let report = evaluate(m, &test, &cfg)?;
                rows.push(RobustnessRow {
                    noise_sigma,
                    blur_sigma,
                    method: method.to_string(),
                    nrmse: report.nrmse,
                    mcv: report.mcv,
                    mav: report.mav,
                });
            }
        }
    }
    Ok(rows)
}

/// Fine-tunes once on the configured training data, then runs [`robustness_table`].
pub fn robustness_sweep(levels: &RobustnessLevels, config: &ExperimentConfig) -> Result<Vec<RobustnessRow>> {
    levels.validate()?;
    config.validate()?;
    let train = generate_split(config, &config.train_split())?;
    let outcome = finetune(initial_model(config)?, &train, config)?;
    robustness_table(&outcome.model, levels, config)
}

/// The two-term jitter objective on scalar errors of two adjacent frames.
pub fn loss_surface_value(e_t: f64, e_prev: f64, config: &ExperimentConfig) -> LossSurfacePoint {
    let jitter = config.loss.jitter_config();
    let rho = |e: f64| jitter.pixel_loss.pointwise(e, 0.0, jitter.theta).0;
    let pixel = rho(e_t) + rho(e_prev);
    let pixel_term = jitter.lambda * pixel;
    let modulated_term = (e_t - e_prev).abs() * pixel;
    LossSurfacePoint {
        e_t,
        e_prev,
        pixel_term,
        modulated_term,
        total: pixel_term + modulated_term,
    }
}

/// Samples [`loss_surface_value`] on a `resolution x resolution` grid over `[-1, 1]^2`.
pub fn export_loss_surface(config: &ExperimentConfig, resolution: usize) -> Result<Vec<LossSurfacePoint>> {
    if resolution < 16 {
        return Err(Error::config("resolution", format!("must be >= 16, got {resolution}")));
    }
    config.validate()?;
    let axis: Vec<f64> = (0..resolution)
        .map(|i| -1.0 + 2.0 * i as f64 / (resolution - 1) as f64)
        .collect();
    Ok(axis
        .iter()
        .flat_map(|&e_t| axis.iter().map(move |&e_prev| (e_t, e_prev)))
        .map(|(e_t, e_prev)| loss_surface_value(e_t, e_prev, config))
        .collect())
}

/// Writes serializable rows as CSV with a header line.
pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
