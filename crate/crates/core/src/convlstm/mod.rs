//! Single-layer ConvLSTM stabilizer with a zero-initialized 1x1 output
//! projection and a residual skip: `s_t = o_t + proj(h_t)`.
//!
//! Gates follow the usual ConvLSTM equations without peephole terms:
//!
//! ```text
//! [i, f, o, g] = conv([o_t, h_{t-1}]) + b
//! c_t = sigmoid(f) * c_{t-1} + sigmoid(i) * tanh(g)
//! h_t = sigmoid(o) * tanh(c_t)
//! ```
//!
//! Convolutions are "same" size with zero padding. Everything runs in `f64`.

mod adam;
mod cell;
pub mod checkpoint;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use cell::{CellCache, CellGradients};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::HeatmapStack;

pub const DEFAULT_HIDDEN_CHANNELS: usize = 16;
pub const DEFAULT_KERNEL_SIZE: usize = 3;
pub const FORGET_BIAS_INIT: f64 = 1.0;

/// Gate order inside the stacked weight and bias tensors.
pub const GATES: [&str; 4] = ["input", "forget", "output", "candidate"];

/// A dense `channels x height x width` block of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_stack(stack: &HeatmapStack) -> Self {
        Self {
            channels: stack.landmarks(),
            height: stack.height(),
            width: stack.width(),
            data: stack.to_flat(),
        }
    }

    pub fn to_stack(&self) -> Result<HeatmapStack> {
        HeatmapStack::from_flat(self.channels, self.height, self.width, &self.data)
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Recurrent state `(h, c)`; a fresh state is all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmState {
    pub h: Tensor3,
    pub c: Tensor3,
}

impl ConvLstmState {
    pub fn zeros(hidden_channels: usize, height: usize, width: usize) -> Self {
        Self {
            h: Tensor3::zeros(hidden_channels, height, width),
            c: Tensor3::zeros(hidden_channels, height, width),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_channels: usize,
    pub kernel_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_channels: DEFAULT_HIDDEN_CHANNELS,
            kernel_size: DEFAULT_KERNEL_SIZE,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_channels == 0 {
            return Err(Error::config("model.hidden_channels", "must be >= 1"));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::config(
                "model.kernel_size",
                format!("must be a positive odd integer, got {}", self.kernel_size),
            ));
        }
        Ok(())
    }
}

/// Parameters of the stabilization stage.
///
/// All parameters live in one flat vector in this order:
/// gate weights `[4 * C_h][K + C_h][k][k]` (gates stacked as in [`GATES`]),
/// gate biases `[4 * C_h]`, projection weights `[K][C_h]`, projection biases `[K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmModel {
    input_channels: usize,
    hidden_channels: usize,
    kernel_size: usize,
    params: Vec<f64>,
    version: u64,
}

impl ConvLstmModel {
    /// Standard initialization: gate weights uniform in `+-1/sqrt(fan_in)`,
    /// biases zero except the forget gate (+1), projection zero.
    pub fn new(input_channels: usize, config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(input_channels, config)?;
        let fan_in = (model.in_channels() * model.kernel_size * model.kernel_size) as f64;
        model.fill_gate_weights(seed, 1.0 / fan_in.sqrt());
        Ok(model)
    }

    /// Like [`ConvLstmModel::new`] but with gate weights uniform in `+-scale`.
    pub fn with_weight_scale(input_channels: usize, config: ModelConfig, seed: u64, scale: f64) -> Result<Self> {
        let mut model = Self::zeroed(input_channels, config)?;
        model.fill_gate_weights(seed, scale);
        Ok(model)
    }

    /// Rebuilds a model from a flat parameter vector in the documented order.
    pub fn from_params(input_channels: usize, config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeroed(input_channels, config)?;
        if params.len() != model.params.len() {
            return Err(Error::shape(format!("{} parameters", model.params.len()), params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                what: "model parameters".into(),
            });
        }
        model.params = params;
        Ok(model)
    }

    fn zeroed(input_channels: usize, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        if input_channels == 0 {
            return Err(Error::config("landmarks", "must be >= 1"));
        }
        let hidden = config.hidden_channels;
        let mut model = Self {
            input_channels,
            hidden_channels: hidden,
            kernel_size: config.kernel_size,
            params: vec![0.0; param_count(input_channels, config)],
            version: 0,
        };
        let forget = model.offsets().gate_biases + hidden;
        model.params[forget..forget + hidden].fill(FORGET_BIAS_INIT);
        Ok(model)
    }

    fn fill_gate_weights(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let end = self.offsets().gate_biases;
        for w in &mut self.params[..end] {
            *w = rng.random_range(-scale..=scale);
        }
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn hidden_channels(&self) -> usize {
        self.hidden_channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            hidden_channels: self.hidden_channels,
            kernel_size: self.kernel_size,
        }
    }

    /// Channels seen by the gate convolution: the input heatmaps plus the hidden state.
    pub fn in_channels(&self) -> usize {
        self.input_channels + self.hidden_channels
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Replaces every parameter. Invalidates outstanding forward caches.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::shape(self.params.len(), params.len()));
        }
        self.params.copy_from_slice(params);
        self.version += 1;
        Ok(())
    }

    pub(crate) fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn offsets(&self) -> ParamOffsets {
        let (k_in, hidden, k) = (self.input_channels, self.hidden_channels, self.kernel_size);
        let gate_biases = 4 * hidden * (k_in + hidden) * k * k;
        let proj_weights = gate_biases + 4 * hidden;
        let proj_biases = proj_weights + k_in * hidden;
        ParamOffsets {
            gate_biases,
            proj_weights,
            proj_biases,
        }
    }

    pub fn gate_weights(&self) -> &[f64] {
        &self.params[..self.offsets().gate_biases]
    }

    pub fn gate_biases(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o.gate_biases..o.proj_weights]
    }

    pub fn proj_weights(&self) -> &[f64] {
        let o = self.offsets();
        &self.params[o.proj_weights..o.proj_biases]
    }

    pub fn proj_biases(&self) -> &[f64] {
        &self.params[self.offsets().proj_biases..]
    }

    pub fn zero_state(&self, height: usize, width: usize) -> ConvLstmState {
        ConvLstmState::zeros(self.hidden_channels, height, width)
    }

    /// Runs a whole sequence from a zero state and returns one stabilized stack per frame.
    pub fn run_sequence(&self, frames: &[HeatmapStack]) -> Result<Vec<HeatmapStack>> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Empty("sequence without frames".into()))?;
        let mut state = self.zero_state(first.height(), first.width());
        let mut outputs = Vec::with_capacity(frames.len());
        for frame in frames {
            let (next, s_t, _) = self.cell_forward(&state, frame)?;
            state = next;
            outputs.push(s_t);
        }
        Ok(outputs)
    }
}

/// Number of trainable parameters for `input_channels` landmarks.
pub fn param_count(input_channels: usize, config: ModelConfig) -> usize {
    let (hidden, k) = (config.hidden_channels, config.kernel_size);
    4 * hidden * (input_channels + hidden) * k * k + 4 * hidden + input_channels * hidden + input_channels
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ParamOffsets {
    pub gate_biases: usize,
    pub proj_weights: usize,
    pub proj_biases: usize,
}
