//! High-order ARX models without a designed input delay.
//!
//! An [`ArxModel`] predicts `y[k]` from the `d` most recent input/output pairs:
//!
//! ```text
//! y[k] = R [y[k-1]; u[k-1]; y[k-2]; u[k-2]; ...; y[k-d]; u[k-d]]
//! ```
//!
//! Blocks are ordered newest first and each block stacks the `p` outputs before
//! the `m` inputs, so `R` is `p x d(m+p)`. Dead times live in which `u` lags
//! carry weight, which lets a correction move a delay without re-parameterizing.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lasso::{Design, LassoOptions};
use crate::plant::{delay_samples, PlantSimulator, TransferMatrixModel};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct ArxModel {
    coefficients: DMatrix<f64>,
    order: usize,
    inputs: usize,
    sample_period: f64,
}

/// JSON layout: `{p, m, d, dt, coefficients}` with coefficients row-major.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArxFile {
    p: usize,
    m: usize,
    d: usize,
    dt: f64,
    coefficients: Vec<f64>,
}

impl ArxModel {
    pub fn new(coefficients: DMatrix<f64>, order: usize, inputs: usize, sample_period: f64) -> Result<Self> {
        let outputs = coefficients.nrows();
        if outputs == 0 || inputs == 0 || order == 0 {
            return Err(Error::InvalidModel("ARX model needs p, m, d >= 1".into()));
        }
        if coefficients.ncols() != order * (inputs + outputs) {
            return Err(Error::Dimension(format!(
                "coefficient matrix has {} columns, expected d(m+p) = {}",
                coefficients.ncols(),
                order * (inputs + outputs)
            )));
        }
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "sample period must be positive, got {sample_period}"
            )));
        }
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite ARX coefficient".into()));
        }
        Ok(ArxModel {
            coefficients,
            order,
            inputs,
            sample_period,
        })
    }

    pub fn zeros(outputs: usize, inputs: usize, order: usize, sample_period: f64) -> Result<Self> {
        Self::new(
            DMatrix::zeros(outputs, order * (inputs + outputs)),
            order,
            inputs,
            sample_period,
        )
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    /// Same structure with a different coefficient matrix.
    pub fn with_coefficients(&self, coefficients: DMatrix<f64>) -> Result<Self> {
        if coefficients.shape() != self.coefficients.shape() {
            return Err(Error::Dimension(format!(
                "coefficient shape {:?} does not match {:?}",
                coefficients.shape(),
                self.coefficients.shape()
            )));
        }
        Self::new(coefficients, self.order, self.inputs, self.sample_period)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    /// Length `d(m+p)` of a regressor (history) vector.
    pub fn regressor_len(&self) -> usize {
        self.coefficients.ncols()
    }

    /// Column of `R` holding output `output` at lag `lag + 1`.
    pub fn output_column(&self, lag: usize, output: usize) -> usize {
        lag * (self.inputs + self.outputs()) + output
    }

    /// Column of `R` holding input `input` at lag `lag + 1`.
    pub fn input_column(&self, lag: usize, input: usize) -> usize {
        lag * (self.inputs + self.outputs()) + self.outputs() + input
    }

    pub fn nonzero_fraction(&self) -> f64 {
        let nz = self.coefficients.iter().filter(|&&v| v != 0.0).count();
        nz as f64 / self.coefficients.len() as f64
    }

    pub fn one_step_predict(&self, history: &[f64]) -> Result<DVector<f64>> {
        if history.len() != self.regressor_len() {
            return Err(Error::Dimension(format!(
                "history has {} entries, expected {}",
                history.len(),
                self.regressor_len()
            )));
        }
        Ok(&self.coefficients * DVector::from_column_slice(history))
    }

    /// Simulate the model open loop, feeding its own predictions back as outputs.
    ///
    /// `inputs` is `m x L` (column `k` is `u[k]`); `initial_history` is the
    /// regressor for `y[0]`. Returns `p x L` outputs `y[0..L]`; `u[k]` first
    /// influences `y[k+1]`.
    pub fn free_run(&self, inputs: &DMatrix<f64>, initial_history: &[f64]) -> Result<DMatrix<f64>> {
        if inputs.nrows() != self.inputs {
            return Err(Error::Dimension(format!(
                "input sequence has {} rows, model has {} inputs",
                inputs.nrows(),
                self.inputs
            )));
        }
        if initial_history.len() != self.regressor_len() {
            return Err(Error::Dimension(format!(
                "initial history has {} entries, expected {}",
                initial_history.len(),
                self.regressor_len()
            )));
        }
        let p = self.outputs();
        let width = p + self.inputs;
        let len = inputs.ncols();
        let mut history = initial_history.to_vec();
        let mut out = DMatrix::zeros(p, len);
        let r = &self.coefficients;
        for k in 0..len {
            for i in 0..p {
                let mut acc = 0.0;
                for (c, h) in history.iter().enumerate() {
                    if *h != 0.0 {
                        acc += r[(i, c)] * h;
                    }
                }
                out[(i, k)] = acc;
            }
            let keep = history.len() - width;
            history.copy_within(0..keep, width);
            for i in 0..p {
                history[i] = out[(i, k)];
            }
            for j in 0..self.inputs {
                history[p + j] = inputs[(j, k)];
            }
        }
        Ok(out)
    }

    /// Unit-step responses from `input` to every output, `p x (samples + 1)`, zero history.
    pub fn step_responses(&self, input: usize, samples: usize) -> DMatrix<f64> {
        assert!(input < self.inputs, "input index out of range");
        let mut u = DMatrix::zeros(self.inputs, samples + 1);
        u.row_mut(input).fill(1.0);
        self.free_run(&u, &vec![0.0; self.regressor_len()])
            .expect("dimensions are consistent by construction")
    }

    /// Discrete step response `phi[0..=samples]` from `input` to `output`.
    pub fn step_response(&self, input: usize, output: usize, samples: usize) -> Vec<f64> {
        assert!(output < self.outputs(), "output index out of range");
        self.step_responses(input, samples)
            .row(output)
            .iter()
            .copied()
            .collect()
    }

    /// Response to a unit pulse on `input` at `k = 0`, computed as the first
    /// difference of the step response so the two agree exactly.
    pub fn impulse_response(&self, input: usize, output: usize, samples: usize) -> Vec<f64> {
        first_difference(&self.step_response(input, output, samples))
    }

    pub fn to_json(&self) -> String {
        let file = ArxFile {
            p: self.outputs(),
            m: self.inputs,
            d: self.order,
            dt: self.sample_period,
            coefficients: self.coefficients.transpose().iter().copied().collect(),
        };
        serde_json::to_string(&file).expect("ARX model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ArxFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            file: "<arx model>".into(),
            line: e.inner().line(),
            message: format!("{}: {}", e.path(), e.inner()),
        })?;
        let cols = file.d * (file.p + file.m);
        if file.coefficients.len() != file.p * cols {
            return Err(Error::Dimension(format!(
                "{} coefficients for a {}x{} matrix",
                file.coefficients.len(),
                file.p,
                cols
            )));
        }
        let coefficients = DMatrix::from_row_slice(file.p, cols, &file.coefficients);
        Self::new(coefficients, file.d, file.m, file.dt)
    }

    /// Exact ARX representation of a transfer-matrix plant under ZOH sampling.
    ///
    /// Each output row uses the product of its channel denominators, giving
    /// `m` output lags and input lags up to `dead_time/dt + m`. Fails when that
    /// exceeds `order`.
    pub fn exact_from_plant(model: &TransferMatrixModel, sample_period: f64, order: usize) -> Result<Self> {
        let (p, m) = (model.outputs(), model.inputs());
        let mut arx = Self::zeros(p, m, order, sample_period)?;
        for i in 0..p {
            let poles: Vec<f64> = (0..m)
                .map(|j| (-sample_period / model.channel(i, j).time_constant).exp())
                .collect();
            // denominator prod_j (1 - a_j q^-1), coefficient of q^-r at index r
            let denominator = poles.iter().fold(vec![1.0], |acc, &a| poly_mul(&acc, &[1.0, -a]));
            for (r, &c) in denominator.iter().enumerate().skip(1) {
                if r > order {
                    return Err(Error::InvalidArgument(format!("order {order} too small for exact ARX")));
                }
                let col = arx.output_column(r - 1, i);
                arx.coefficients[(i, col)] = -c;
            }
            for j in 0..m {
                let ch = model.channel(i, j);
                let delay = delay_samples(ch.dead_time, sample_period, i, j)?;
                let b = ch.gain * (1.0 - poles[j]);
                let others = (0..m)
                    .filter(|&l| l != j)
                    .fold(vec![1.0], |acc, l| poly_mul(&acc, &[1.0, -poles[l]]));
                for (r, &c) in others.iter().enumerate() {
                    let lag = delay + 1 + r;
                    if lag > order {
                        return Err(Error::InvalidArgument(format!("order {order} too small for exact ARX")));
                    }
                    let col = arx.input_column(lag - 1, j);
                    arx.coefficients[(i, col)] += b * c;
                }
            }
        }
        Ok(arx)
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub(crate) fn first_difference(step: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    step.iter()
        .map(|&v| {
            let d = v - prev;
            prev = v;
            d
        })
        .collect()
}

/// Sample-major signal store `[y[k]; u[k]]` used to assemble lagged regressors.
#[derive(Debug, Clone)]
pub(crate) struct SignalLog {
    pub outputs: usize,
    pub inputs: usize,
    data: Vec<f64>,
}

impl SignalLog {
    pub fn with_capacity(outputs: usize, inputs: usize, samples: usize) -> Self {
        SignalLog {
            outputs,
            inputs,
            data: Vec::with_capacity(samples * (outputs + inputs)),
        }
    }

    pub fn push(&mut self, y: &[f64], u: &[f64]) {
        self.data.extend_from_slice(y);
        self.data.extend_from_slice(u);
    }

    pub fn output(&self, k: usize, i: usize) -> f64 {
        self.data[k * (self.outputs + self.inputs) + i]
    }

    /// Write the regressor for target sample `k` (lags `k-1` down to `k-order`).
    pub fn regressor_into(&self, k: usize, order: usize, out: &mut [f64]) {
        let w = self.outputs + self.inputs;
        debug_assert!(k >= order && out.len() == order * w);
        for lag in 0..order {
            let src = (k - 1 - lag) * w;
            out[lag * w..(lag + 1) * w].copy_from_slice(&self.data[src..src + w]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConversionConfig {
    /// Length of the Gaussian excitation in samples.
    pub excitation_samples: usize,
    pub lambda: f64,
    pub order: usize,
    pub seed: u64,
    pub lasso: LassoOptions,
}

impl ConversionConfig {
    /// 10 000 minutes of unit-variance excitation at 0.2 min, lambda 1e-6, order 150.
    pub fn standard(seed: u64) -> Self {
        ConversionConfig {
            excitation_samples: 50_000,
            lambda: 1e-6,
            order: 150,
            seed,
            lasso: LassoOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.excitation_samples <= self.order {
            return Err(Error::InvalidArgument(format!(
                "excitation length {} must exceed the order {}",
                self.excitation_samples, self.order
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "conversion lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.order == 0 {
            return Err(Error::InvalidArgument("order must be at least 1".into()));
        }
        Ok(())
    }
}

const GRAM_CHUNK: usize = 4096;

/// Fit an ARX model to a noise-free transfer-matrix plant driven by white Gaussian inputs.
///
/// Each output row is an independent lasso problem over the shared lagged
/// regressors, solved at `cfg.lambda`.
pub fn convert_from_plant(model: &TransferMatrixModel, sample_period: f64, cfg: &ConversionConfig) -> Result<ArxModel> {
    cfg.validate()?;
    let (p, m) = (model.outputs(), model.inputs());
    let n0 = cfg.excitation_samples;
    let mut plant = PlantSimulator::new(model, sample_period)?;
    let mut rng = rng::stream(cfg.seed, Purpose::ConversionExcitation);

    let mut log = SignalLog::with_capacity(p, m, n0 + 1);
    let mut y = plant.output();
    for _ in 0..n0 {
        let u: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
        log.push(&y, &u);
        y = plant.advance(&u);
    }
    log.push(&y, &vec![0.0; m]);

    let order = cfg.order;
    let features = order * (p + m);
    let targets: Vec<usize> = (order..=n0).collect();
    let n = targets.len();

    let mut gram = DMatrix::zeros(features, features);
    let mut xty = DMatrix::zeros(features, p);
    let mut yty = vec![0.0; p];
    for chunk in targets.chunks(GRAM_CHUNK) {
        let mut x = DMatrix::zeros(features, chunk.len());
        let mut yc = DMatrix::zeros(chunk.len(), p);
        for (c, &k) in chunk.iter().enumerate() {
            log.regressor_into(k, order, x.column_mut(c).as_mut_slice());
            for i in 0..p {
                let v = log.output(k, i);
                yc[(c, i)] = v;
                yty[i] += v * v;
            }
        }
        gram.gemm(1.0, &x, &x.transpose(), 1.0);
        xty.gemm(1.0, &x, &yc, 1.0);
    }
    let inv_n = 1.0 / n as f64;
    gram *= inv_n;
    xty *= inv_n;

    let design = Design::from_gram(gram, n, cfg.lasso.standardize);
    let rows = (0..p)
        .into_par_iter()
        .map(|i| {
            let target = design.target_from_moments(xty.column(i).into_owned(), yty[i] * inv_n);
            design
                .fit(&target, cfg.lambda, None, &cfg.lasso)
                .map(|s| s.coefficients)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut coefficients = DMatrix::zeros(p, features);
    for (i, row) in rows.iter().enumerate() {
        coefficients.row_mut(i).copy_from(&row.transpose());
    }
    ArxModel::new(coefficients, order, m, sample_period)
}
