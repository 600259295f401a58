//! First-order-plus-dead-time (FOPDT) transfer-matrix plants and their exact
//! sampled-data simulation.
//!
//! Every channel `(i, j)` maps input `j` to output `i` through
//! `K e^{-L s} / (1 + T s)`. Signals are deviation variables around the
//! column's equilibrium, so a plant at rest has zero inputs and outputs.
//!
//! Inputs are piecewise constant over the sample period (zero-order hold), which
//! makes the per-channel discretization
//!
//! ```text
//! state[k+1] = a * state[k] + K (1 - a) * u[k - n],   a = exp(-dt / T),  n = L / dt
//! ```
//!
//! exact: there is no integrator tolerance anywhere in this module.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that a dead time is an integer number of samples.
pub const COMMENSURATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FopdtChannel {
    /// Static gain, output units per input unit.
    pub gain: f64,
    /// Time constant in minutes.
    pub time_constant: f64,
    /// Dead time in minutes.
    pub dead_time: f64,
}

impl FopdtChannel {
    pub fn new(gain: f64, time_constant: f64, dead_time: f64) -> Result<Self> {
        let ch = FopdtChannel {
            gain,
            time_constant,
            dead_time,
        };
        ch.validate()?;
        Ok(ch)
    }

    fn validate(&self) -> Result<()> {
        if !(self.gain.is_finite() && self.time_constant.is_finite() && self.dead_time.is_finite()) {
            return Err(Error::InvalidModel(format!("non-finite channel parameters {self:?}")));
        }
        if self.time_constant <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "time constant must be positive, got {}",
                self.time_constant
            )));
        }
        if self.dead_time < 0.0 {
            return Err(Error::InvalidModel(format!(
                "dead time must be nonnegative, got {}",
                self.dead_time
            )));
        }
        Ok(())
    }

    /// Continuous unit-step response at `t` minutes.
    pub fn step_response(&self, t: f64) -> f64 {
        analytic_step_response(self, t)
    }

    /// Continuous unit-impulse response at `t` minutes, `K/T e^{-(t-L)/T}` for `t >= L`.
    pub fn impulse_response(&self, t: f64) -> f64 {
        if t < self.dead_time {
            0.0
        } else {
            self.gain / self.time_constant * (-(t - self.dead_time) / self.time_constant).exp()
        }
    }
}

/// `K (1 - exp(-(t - L)/T))` for `t >= L`, zero before the dead time.
pub fn analytic_step_response(channel: &FopdtChannel, t: f64) -> f64 {
    if t <= channel.dead_time {
        0.0
    } else {
        channel.gain * (1.0 - (-(t - channel.dead_time) / channel.time_constant).exp())
    }
}

/// A `p x m` grid of FOPDT channels, stored row-major (row = output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransferMatrixFile", into = "TransferMatrixFile")]
pub struct TransferMatrixModel {
    outputs: usize,
    inputs: usize,
    channels: Vec<FopdtChannel>,
}

/// On-disk shape: `{"outputs": p, "inputs": m, "channels": [[{..}, ..], ..]}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransferMatrixFile {
    outputs: usize,
    inputs: usize,
    channels: Vec<Vec<FopdtChannel>>,
}

impl TryFrom<TransferMatrixFile> for TransferMatrixModel {
    type Error = Error;

    fn try_from(file: TransferMatrixFile) -> Result<Self> {
        if file.channels.len() != file.outputs || file.channels.iter().any(|row| row.len() != file.inputs) {
            return Err(Error::Dimension(format!(
                "channel grid does not match outputs = {}, inputs = {}",
                file.outputs, file.inputs
            )));
        }
        TransferMatrixModel::from_rows(file.channels)
    }
}

impl From<TransferMatrixModel> for TransferMatrixFile {
    fn from(model: TransferMatrixModel) -> Self {
        TransferMatrixFile {
            outputs: model.outputs,
            inputs: model.inputs,
            channels: model.channels.chunks(model.inputs).map(<[_]>::to_vec).collect(),
        }
    }
}

impl TransferMatrixModel {
    pub fn from_rows(rows: Vec<Vec<FopdtChannel>>) -> Result<Self> {
        let outputs = rows.len();
        let inputs = rows.first().map_or(0, Vec::len);
        if outputs == 0 || inputs == 0 {
            return Err(Error::InvalidModel("empty channel grid".into()));
        }
        if rows.iter().any(|r| r.len() != inputs) {
            return Err(Error::Dimension("ragged channel grid".into()));
        }
        let channels: Vec<FopdtChannel> = rows.into_iter().flatten().collect();
        for ch in &channels {
            ch.validate()?;
        }
        Ok(TransferMatrixModel {
            outputs,
            inputs,
            channels,
        })
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    /// Channel from input `input` to output `output` (zero-based).
    pub fn channel(&self, output: usize, input: usize) -> &FopdtChannel {
        &self.channels[output * self.inputs + input]
    }

    pub fn channels(&self) -> impl Iterator<Item = ((usize, usize), &FopdtChannel)> {
        let m = self.inputs;
        self.channels
            .iter()
            .enumerate()
            .map(move |(idx, ch)| ((idx / m, idx % m), ch))
    }

    pub fn max_time_constant(&self) -> f64 {
        self.channels.iter().map(|c| c.time_constant).fold(0.0, f64::max)
    }

    pub fn max_dead_time(&self) -> f64 {
        self.channels.iter().map(|c| c.dead_time).fold(0.0, f64::max)
    }
}

/// Per-channel parameter offsets describing how an aged plant differs from its model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MismatchSpec {
    /// `p x m` additive gain changes.
    pub gain_deltas: Vec<Vec<f64>>,
    /// `p x m` additive dead-time changes in minutes.
    pub delay_deltas: Vec<Vec<f64>>,
}

impl MismatchSpec {
    pub fn none(outputs: usize, inputs: usize) -> Self {
        MismatchSpec {
            gain_deltas: vec![vec![0.0; inputs]; outputs],
            delay_deltas: vec![vec![0.0; inputs]; outputs],
        }
    }

    /// Halved gains on the reflux column: ΔK11 = -6.4, ΔK21 = -3.3.
    pub fn wood_berry_gain() -> Self {
        MismatchSpec {
            gain_deltas: vec![vec![-6.4, 0.0], vec![-3.3, 0.0]],
            delay_deltas: vec![vec![0.0; 2]; 2],
        }
    }

    /// Four extra minutes of transport delay on the steam column: ΔL12 = ΔL22 = 4.0.
    pub fn wood_berry_delay() -> Self {
        MismatchSpec {
            gain_deltas: vec![vec![0.0; 2]; 2],
            delay_deltas: vec![vec![0.0, 4.0], vec![0.0, 4.0]],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.gain_deltas
            .iter()
            .chain(&self.delay_deltas)
            .flatten()
            .all(|&v| v == 0.0)
    }
}

/// The Wood-Berry binary distillation column around its nominal operating point.
///
/// Outputs: overhead and bottoms composition (wt%). Inputs: reflux and steam
/// flow (lb/min).
pub fn wood_berry_nominal() -> TransferMatrixModel {
    let ch = |gain, time_constant, dead_time| FopdtChannel {
        gain,
        time_constant,
        dead_time,
    };
    TransferMatrixModel {
        outputs: 2,
        inputs: 2,
        channels: vec![
            ch(12.8, 16.7, 1.0),
            ch(-18.9, 21.0, 3.0),
            ch(6.6, 10.9, 7.0),
            ch(-19.4, 14.4, 3.0),
        ],
    }
}

pub fn apply_mismatch(model: &TransferMatrixModel, spec: &MismatchSpec) -> Result<TransferMatrixModel> {
    let shape_ok = |grid: &Vec<Vec<f64>>| grid.len() == model.outputs && grid.iter().all(|r| r.len() == model.inputs);
    if !shape_ok(&spec.gain_deltas) || !shape_ok(&spec.delay_deltas) {
        return Err(Error::Dimension(format!(
            "mismatch grids must be {}x{}",
            model.outputs, model.inputs
        )));
    }
    let mut out = model.clone();
    for ((i, j), ch) in model.channels() {
        let updated = FopdtChannel {
            gain: ch.gain + spec.gain_deltas[i][j],
            time_constant: ch.time_constant,
            dead_time: ch.dead_time + spec.delay_deltas[i][j],
        };
        if updated.dead_time < 0.0 {
            return Err(Error::InvalidModel(format!(
                "channel ({},{}) dead time would become {} min",
                i + 1,
                j + 1,
                updated.dead_time
            )));
        }
        updated.validate()?;
        out.channels[i * model.inputs + j] = updated;
    }
    Ok(out)
}

/// Number of whole samples in `dead_time`, or an error naming the channel.
pub fn delay_samples(dead_time: f64, sample_period: f64, output: usize, input: usize) -> Result<usize> {
    let n = (dead_time / sample_period).round();
    if (dead_time - n * sample_period).abs() > COMMENSURATE_TOL {
        return Err(Error::NonCommensurate {
            output: output + 1,
            input: input + 1,
            dead_time,
            sample_period,
        });
    }
    Ok(n as usize)
}

#[derive(Debug, Clone)]
struct ChannelState {
    pole: f64,
    input_gain: f64,
    state: f64,
    /// Buffered inputs, oldest at the front; empty for zero dead time.
    delay_line: VecDeque<f64>,
}

/// Mutable sampled-data simulator of a [`TransferMatrixModel`].
#[derive(Debug, Clone)]
pub struct PlantSimulator {
    model: TransferMatrixModel,
    sample_period: f64,
    channels: Vec<ChannelState>,
    step: usize,
}

impl PlantSimulator {
    pub fn new(model: &TransferMatrixModel, sample_period: f64) -> Result<Self> {
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample period must be positive, got {sample_period}"
            )));
        }
        let channels = model
            .channels()
            .map(|((i, j), ch)| {
                let n = delay_samples(ch.dead_time, sample_period, i, j)?;
                let pole = (-sample_period / ch.time_constant).exp();
                Ok(ChannelState {
                    pole,
                    input_gain: ch.gain * (1.0 - pole),
                    state: 0.0,
                    delay_line: std::iter::repeat_n(0.0, n).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PlantSimulator {
            model: model.clone(),
            sample_period,
            channels,
            step: 0,
        })
    }

    pub fn model(&self) -> &TransferMatrixModel {
        &self.model
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    /// Samples advanced since construction.
    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn delay_line_len(&self, output: usize, input: usize) -> usize {
        self.channels[output * self.model.inputs + input].delay_line.len()
    }

    /// Output at the current sample instant (sum of channel states per row).
    pub fn output(&self) -> Vec<f64> {
        let m = self.model.inputs;
        (0..self.model.outputs)
            .map(|i| self.channels[i * m..(i + 1) * m].iter().map(|c| c.state).sum())
            .collect()
    }

    /// Hold `u` over one sample period and return the noise-free output at the next instant.
    ///
    /// Panics if `u` does not have one entry per input.
    pub fn advance(&mut self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.model.inputs, "input vector length");
        let m = self.model.inputs;
        for (idx, ch) in self.channels.iter_mut().enumerate() {
            let current = u[idx % m];
            let delayed = match ch.delay_line.pop_front() {
                Some(old) => {
                    ch.delay_line.push_back(current);
                    old
                }
                None => current,
            };
            ch.state = ch.pole * ch.state + ch.input_gain * delayed;
        }
        self.step += 1;
        self.output()
    }
}
