//! Experiment scenarios.
//!
//! A scenario fixes everything a run depends on: the nominal plant and its
//! mismatch, controller tuning, reference schedules (one closed-loop run per
//! entry of `runs`), measurement noise, the estimation window and lambda grid,
//! the conversion settings and the benchmark horizon. The JSON layout is
//! described by `docs/scenario.schema.json`; [`Scenario::from_json`] reports
//! syntax errors with line and field path and semantic errors with the path
//! of the offending field.

use serde::{Deserialize, Serialize};

use crate::arx::{convert_from_plant, ArxModel, ConversionConfig};
use crate::error::{Error, Result};
use crate::lasso::LassoOptions;
use crate::mpc::MpcConfig;
use crate::plant::{apply_mismatch, wood_berry_nominal, MismatchSpec, PlantSimulator, TransferMatrixModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    /// Plant sample period in minutes.
    #[serde(default = "default_sample_period")]
    pub sample_period: f64,
    /// Length of each closed-loop run in minutes.
    pub horizon: f64,
    pub plant: PlantSpec,
    #[serde(default = "MpcConfig::wood_berry")]
    pub mpc: MpcConfig,
    pub noise: NoiseSpec,
    pub runs: Vec<RunSpec>,
    #[serde(default)]
    pub mle: MleSpec,
    #[serde(default)]
    pub conversion: ConversionSpec,
    #[serde(default)]
    pub benchmark: BenchmarkSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    /// The model the controller uses and the conversion starts from.
    #[serde(default = "wood_berry_nominal")]
    pub nominal: TransferMatrixModel,
    /// Offsets from the nominal model to the true plant; absent means none.
    #[serde(default)]
    pub mismatch: Option<MismatchSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Per-output, per-sample variance of the additive Gaussian measurement noise.
    pub variance: f64,
    pub seed: u64,
}

/// One closed-loop run: a step schedule per output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub references: Vec<Vec<StepEvent>>,
}

/// From `time` (minutes) on, the reference holds `level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepEvent {
    pub time: f64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MleSpec {
    /// Centre of the estimation window (the reference step), minutes.
    #[serde(default = "default_t_r")]
    pub t_r: f64,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default)]
    pub grid: GridSpec,
    /// Add the L1 penalty to held-out losses.
    #[serde(default)]
    pub include_penalty: bool,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

impl Default for MleSpec {
    fn default() -> Self {
        MleSpec {
            t_r: default_t_r(),
            half_width: default_half_width(),
            grid: GridSpec::default(),
            include_penalty: false,
            standardize: true,
        }
    }
}

/// Candidate lambdas for cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    /// `points` log-spaced values in `[min, max]`, optionally with 0.
    Log {
        min: f64,
        max: f64,
        points: usize,
        #[serde(default = "default_true")]
        include_zero: bool,
    },
    /// `0, step, 2 step, ..., max`.
    Arithmetic {
        step: f64,
        max: f64,
    },
    Explicit {
        values: Vec<f64>,
    },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Log {
            min: 1e-6,
            max: 1e-2,
            points: 61,
            include_zero: true,
        }
    }
}

impl GridSpec {
    /// The grid in ascending order, without duplicates.
    pub fn values(&self) -> Vec<f64> {
        let mut v = match self {
            GridSpec::Log {
                min,
                max,
                points,
                include_zero,
            } => {
                let mut v: Vec<f64> = if *points == 1 {
                    vec![*min]
                } else {
                    let (a, b) = (min.log10(), max.log10());
                    (0..*points)
                        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (*points - 1) as f64))
                        .collect()
                };
                if *include_zero {
                    v.push(0.0);
                }
                v
            }
            GridSpec::Arithmetic { step, max } => {
                let n = (max / step).round() as usize;
                (0..=n).map(|k| k as f64 * step).collect()
            }
            GridSpec::Explicit { values } => values.clone(),
        };
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    fn validate(&self) -> Result<()> {
        match self {
            GridSpec::Log { min, max, points, .. } => {
                if !(*min > 0.0 && min.is_finite()) {
                    return Err(Error::config("mle.grid.min", "must be positive"));
                }
                if !(max >= min && max.is_finite()) {
                    return Err(Error::config("mle.grid.max", "must be finite and >= min"));
                }
                if *points == 0 {
                    return Err(Error::config("mle.grid.points", "must be at least 1"));
                }
            }
            GridSpec::Arithmetic { step, max } => {
                if !(*step > 0.0 && step.is_finite()) {
                    return Err(Error::config("mle.grid.step", "must be positive"));
                }
                if !(*max >= 0.0 && max.is_finite()) {
                    return Err(Error::config("mle.grid.max", "must be finite and >= 0"));
                }
                if max / step > 1e6 {
                    return Err(Error::config("mle.grid.step", "grid would exceed a million points"));
                }
            }
            GridSpec::Explicit { values } => {
                if values.is_empty() {
                    return Err(Error::config("mle.grid.values", "must not be empty"));
                }
                if let Some(i) = values.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(Error::config(
                        format!("mle.grid.values[{i}]"),
                        "must be finite and >= 0",
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConversionSpec {
    #[serde(default)]
    pub method: ConversionMethod,
    #[serde(default = "default_excitation")]
    pub excitation_samples: usize,
    #[serde(default = "default_lambda0")]
    pub lambda: f64,
    #[serde(default = "default_order")]
    pub order: usize,
}

impl Default for ConversionSpec {
    fn default() -> Self {
        ConversionSpec {
            method: ConversionMethod::default(),
            excitation_samples: default_excitation(),
            lambda: default_lambda0(),
            order: default_order(),
        }
    }
}

/// How the base ARX model is obtained from the nominal plant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversionMethod {
    /// Lasso fit on simulated excitation data.
    #[default]
    Lasso,
    /// Exact ZOH discretization; useful as an oracle base.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    /// Step-response horizon in minutes.
    #[serde(default = "default_bench_horizon")]
    pub horizon: f64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            horizon: default_bench_horizon(),
        }
    }
}

fn default_sample_period() -> f64 {
    0.2
}
fn default_t_r() -> f64 {
    500.0
}
fn default_half_width() -> f64 {
    200.0
}
fn default_true() -> bool {
    true
}
fn default_excitation() -> usize {
    50_000
}
fn default_lambda0() -> f64 {
    1e-6
}
fn default_order() -> usize {
    150
}
fn default_bench_horizon() -> f64 {
    100.0
}

/// Whether `value` is an integer multiple of `period` (to 1e-9 relative).
pub(crate) fn is_multiple(value: f64, period: f64) -> bool {
    let n = (value / period).round();
    (n * period - value).abs() <= 1e-9 * value.abs().max(period)
}

/// Number of whole periods in `value`, for values already checked by [`is_multiple`].
pub(crate) fn periods(value: f64, period: f64) -> usize {
    (value / period).round() as usize
}

impl Scenario {
    /// The standard two-run experiment around a reference step at 500 min:
    /// run 1 steps `r1` at 500 min, run 2 holds `r1 = 1` and steps `r2` at 500 min.
    fn two_run(id: &str, mismatch: Option<MismatchSpec>, variance: f64, seed: u64) -> Self {
        let step = |time| vec![StepEvent { time, level: 1.0 }];
        Scenario {
            id: id.into(),
            sample_period: default_sample_period(),
            horizon: 1000.0,
            plant: PlantSpec {
                nominal: wood_berry_nominal(),
                mismatch,
            },
            mpc: MpcConfig::wood_berry(),
            noise: NoiseSpec { variance, seed },
            runs: vec![
                RunSpec {
                    references: vec![step(500.0), vec![]],
                },
                RunSpec {
                    references: vec![step(0.0), step(500.0)],
                },
            ],
            mle: MleSpec::default(),
            conversion: ConversionSpec::default(),
            benchmark: BenchmarkSpec::default(),
        }
    }

    /// Gain mismatch on the reflux column.
    pub fn gain_mismatch(seed: u64) -> Self {
        Self::two_run("gain", Some(MismatchSpec::wood_berry_gain()), 0.001, seed)
    }

    /// Extra transport delay on the steam column.
    pub fn delay_mismatch(seed: u64) -> Self {
        Self::two_run("delay", Some(MismatchSpec::wood_berry_delay()), 0.001, seed)
    }

    /// Plant equal to the model, no noise, exact base model.
    pub fn no_mismatch(seed: u64) -> Self {
        let mut s = Self::two_run("null", None, 0.0, seed);
        s.conversion.method = ConversionMethod::Exact;
        s
    }

    /// Look up a built-in scenario by id.
    pub fn builtin(id: &str, seed: u64) -> Option<Self> {
        match id {
            "gain" => Some(Self::gain_mismatch(seed)),
            "delay" => Some(Self::delay_mismatch(seed)),
            "null" => Some(Self::no_mismatch(seed)),
            _ => None,
        }
    }

    /// Parse and validate. `source` names the document in error messages.
    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Parse {
                file: source.into(),
                line: inner.line(),
                message: if path == "." {
                    inner.to_string()
                } else {
                    format!("{path}: {inner}")
                },
            }
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn seed(&self) -> u64 {
        self.noise.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.noise.seed = seed;
        self
    }

    pub fn mismatch(&self) -> MismatchSpec {
        self.plant
            .mismatch
            .clone()
            .unwrap_or_else(|| MismatchSpec::none(self.plant.nominal.outputs(), self.plant.nominal.inputs()))
    }

    /// The simulated process: nominal model plus mismatch.
    pub fn truth(&self) -> Result<TransferMatrixModel> {
        apply_mismatch(&self.plant.nominal, &self.mismatch())
    }

    pub fn conversion_config(&self) -> ConversionConfig {
        ConversionConfig {
            excitation_samples: self.conversion.excitation_samples,
            lambda: self.conversion.lambda,
            order: self.conversion.order,
            seed: self.seed(),
            lasso: LassoOptions::default(),
        }
    }

    /// Base ARX model of the nominal plant, built as the scenario asks.
    pub fn base_model(&self) -> Result<ArxModel> {
        let dt = self.sample_period;
        match self.conversion.method {
            ConversionMethod::Lasso => convert_from_plant(&self.plant.nominal, dt, &self.conversion_config()),
            ConversionMethod::Exact => ArxModel::exact_from_plant(&self.plant.nominal, dt, self.conversion.order),
        }
        .map_err(|e| e.in_stage("conversion"))
    }

    pub fn lasso_options(&self) -> LassoOptions {
        LassoOptions {
            standardize: self.mle.standardize,
            ..LassoOptions::default()
        }
    }

    /// Samples per run, including `t = 0` and `t = horizon`.
    pub fn samples(&self) -> usize {
        periods(self.horizon, self.sample_period) + 1
    }

    /// Reference vector of run `run` at time `t`.
    pub fn reference(&self, run: usize, t: f64) -> Vec<f64> {
        self.runs[run]
            .references
            .iter()
            .map(|events| events.iter().rfind(|e| e.time <= t + 1e-9).map_or(0.0, |e| e.level))
            .collect()
    }

    /// Check every invariant, reporting the first violation with its field path.
    pub fn validate(&self) -> Result<()> {
        let dt = self.sample_period;
        if self.id.trim().is_empty() {
            return Err(Error::config("id", "must not be empty"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config("sample_period", "must be positive"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) || !is_multiple(self.horizon, dt) {
            return Err(Error::config("horizon", "must be a positive multiple of sample_period"));
        }

        let nominal = &self.plant.nominal;
        let (p, m) = (nominal.outputs(), nominal.inputs());
        if let Some(mm) = &self.plant.mismatch {
            for (name, grid) in [("gain_deltas", &mm.gain_deltas), ("delay_deltas", &mm.delay_deltas)] {
                if grid.len() != p || grid.iter().any(|r| r.len() != m) {
                    return Err(Error::config(
                        format!("plant.mismatch.{name}"),
                        format!("must be {p}x{m}"),
                    ));
                }
                if grid.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::config(format!("plant.mismatch.{name}"), "non-finite entry"));
                }
            }
        }
        let truth = self
            .truth()
            .map_err(|e| Error::config("plant.mismatch", e.to_string()))?;
        PlantSimulator::new(nominal, dt).map_err(|e| Error::config("plant.nominal", e.to_string()))?;
        PlantSimulator::new(&truth, dt).map_err(|e| Error::config("plant.mismatch", e.to_string()))?;
        self.mpc.validate(p, m, dt)?;

        if !(self.noise.variance >= 0.0 && self.noise.variance.is_finite()) {
            return Err(Error::config("noise.variance", "must be finite and >= 0"));
        }

        if self.runs.is_empty() {
            return Err(Error::config("runs", "needs at least one run"));
        }
        for (r, run) in self.runs.iter().enumerate() {
            if run.references.len() != p {
                return Err(Error::config(
                    format!("runs[{r}].references"),
                    format!("needs one schedule per output ({p})"),
                ));
            }
            for (o, events) in run.references.iter().enumerate() {
                let mut last = f64::NEG_INFINITY;
                for (e, ev) in events.iter().enumerate() {
                    let path = format!("runs[{r}].references[{o}][{e}]");
                    if !(ev.time >= 0.0 && ev.time <= self.horizon) {
                        return Err(Error::config(format!("{path}.time"), "must lie within [0, horizon]"));
                    }
                    if ev.time < last {
                        return Err(Error::config(format!("{path}.time"), "events must be sorted by time"));
                    }
                    if !ev.level.is_finite() {
                        return Err(Error::config(format!("{path}.level"), "must be finite"));
                    }
                    last = ev.time;
                }
            }
        }

        let mle = &self.mle;
        if !(mle.half_width >= 0.0) || !is_multiple(mle.half_width, dt) {
            return Err(Error::config(
                "mle.half_width",
                "must be a nonnegative multiple of sample_period",
            ));
        }
        if !(mle.t_r.is_finite()) || !is_multiple(mle.t_r, dt) {
            return Err(Error::config("mle.t_r", "must be a multiple of sample_period"));
        }
        if self.horizon < mle.t_r + mle.half_width {
            return Err(Error::config(
                "mle.t_r",
                "window end t_r + half_width exceeds the horizon",
            ));
        }
        let history = self.conversion.order as f64 * dt;
        if mle.t_r - mle.half_width < history - 1e-9 {
            return Err(Error::config(
                "mle.t_r",
                format!("window start leaves less than order x sample_period = {history} min of history"),
            ));
        }
        mle.grid.validate()?;

        let conv = &self.conversion;
        if conv.order == 0 {
            return Err(Error::config("conversion.order", "must be at least 1"));
        }
        if conv.excitation_samples <= conv.order {
            return Err(Error::config("conversion.excitation_samples", "must exceed the order"));
        }
        if !(conv.lambda > 0.0 && conv.lambda.is_finite()) {
            return Err(Error::config("conversion.lambda", "must be positive"));
        }
        if !(self.benchmark.horizon > 0.0) || !is_multiple(self.benchmark.horizon, dt) {
            return Err(Error::config(
                "benchmark.horizon",
                "must be a positive multiple of sample_period",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_error(text: &str) -> String {
        match Scenario::from_json(text, "s.json").unwrap_err() {
            Error::Config { path, .. } => path,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn builtins_are_valid_and_round_trip() {
        for id in ["gain", "delay", "null"] {
            let s = Scenario::builtin(id, 7).unwrap();
            s.validate().unwrap();
            let back = Scenario::from_json(&s.to_json(), "mem").unwrap();
            assert_eq!(back, s);
        }
        assert!(Scenario::builtin("other", 0).is_none());
    }

    #[test]
    fn standard_schedule() {
        let s = Scenario::gain_mismatch(1);
        assert_eq!(s.samples(), 5001);
        assert_eq!(s.reference(0, 499.8), vec![0.0, 0.0]);
        assert_eq!(s.reference(0, 500.0), vec![1.0, 0.0]);
        assert_eq!(s.reference(1, 0.0), vec![1.0, 0.0]);
        assert_eq!(s.reference(1, 1000.0), vec![1.0, 1.0]);
        let truth = s.truth().unwrap();
        assert_eq!(truth.channel(0, 0).gain, 6.4);
    }

    #[test]
    fn minimal_document_takes_defaults() {
        let text = r#"{
            "id": "tiny",
            "horizon": 1000,
            "plant": {},
            "noise": {"variance": 0.001, "seed": 3},
            "runs": [{"references": [[{"time": 500, "level": 1}], []]}]
        }"#;
        let s = Scenario::from_json(text, "tiny.json").unwrap();
        assert_eq!(s.plant.nominal, wood_berry_nominal());
        assert_eq!(s.mpc, MpcConfig::wood_berry());
        assert_eq!(s.mle.grid.values().len(), 62);
        assert_eq!(s.conversion.order, 150);
    }

    #[test]
    fn syntax_errors_carry_line_and_path() {
        let text = "{\n  \"id\": \"x\",\n  \"horizon\": \"long\"\n}";
        match Scenario::from_json(text, "bad.json").unwrap_err() {
            Error::Parse { file, line, message } => {
                assert_eq!(file, "bad.json");
                assert_eq!(line, 3);
                assert!(message.starts_with("horizon"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let unknown =
            r#"{"id": "x", "horizon": 10, "plant": {}, "noise": {"variance": 0, "seed": 1, "extra": 2}, "runs": []}"#;
        match Scenario::from_json(unknown, "u.json").unwrap_err() {
            Error::Parse { message, .. } => assert!(message.starts_with("noise"), "{message}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let mut s = Scenario::gain_mismatch(1);
        s.noise.variance = -1.0;
        assert_eq!(field_error(&s.to_json()), "noise.variance");

        let mut s = Scenario::gain_mismatch(1);
        s.runs[1].references[1][0].time = 2000.0;
        assert_eq!(field_error(&s.to_json()), "runs[1].references[1][0].time");

        let mut s = Scenario::gain_mismatch(1);
        s.mle.t_r = 900.0;
        assert_eq!(field_error(&s.to_json()), "mle.t_r");

        let mut s = Scenario::gain_mismatch(1);
        s.mle.t_r = 10.0;
        assert_eq!(field_error(&s.to_json()), "mle.t_r");

        let mut s = Scenario::gain_mismatch(1);
        s.plant.mismatch.as_mut().unwrap().delay_deltas[0][1] = 0.1;
        assert_eq!(field_error(&s.to_json()), "plant.mismatch");

        let mut s = Scenario::gain_mismatch(1);
        s.mpc.control_horizon = 40;
        assert_eq!(field_error(&s.to_json()), "mpc.prediction_horizon");

        let mut s = Scenario::gain_mismatch(1);
        s.mle.grid = GridSpec::Explicit {
            values: vec![1e-3, -1.0],
        };
        assert_eq!(field_error(&s.to_json()), "mle.grid.values[1]");
    }

    #[test]
    fn grids() {
        let log = GridSpec::default().values();
        assert_eq!(log.len(), 62);
        assert_eq!(log[0], 0.0);
        assert!((log[1] - 1e-6).abs() < 1e-18);
        assert!((log[61] - 1e-2).abs() < 1e-14);
        assert!(log.windows(2).all(|w| w[0] < w[1]));
        let arith = GridSpec::Arithmetic { step: 1e-6, max: 1e-2 }.values();
        assert_eq!(arith.len(), 10_001);
        assert_eq!(arith[2], 2e-6);
        let explicit = GridSpec::Explicit {
            values: vec![1e-3, 0.0, 1e-3],
        }
        .values();
        assert_eq!(explicit, vec![0.0, 1e-3]);
    }
}
