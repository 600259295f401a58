//! Open-loop model comparison by step and impulse responses.
//!
//! Channel `(i, j)` is output `i`, input `j`. Transfer-matrix responses are
//! sampled from the closed forms; ARX responses come from free-run simulation.
//! Impulse curves are responses to a unit pulse lasting one sample. For an ARX
//! model that is the first difference of the step response; for a transfer
//! matrix it is the continuous impulse response scaled by the sample period,
//! which has the same magnitude and keeps the peak at the dead time.

use serde::Serialize;

use crate::arx::ArxModel;
use crate::error::{Error, Result};
use crate::lasso::LassoOptions;
use crate::mle::{estimate_path, MpmEstimate, RegressionDataset};
use crate::plant::{analytic_step_response, TransferMatrixModel};
use crate::scenario::{is_multiple, periods};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Step,
    Impulse,
}

impl ResponseKind {
    pub fn name(self) -> &'static str {
        match self {
            ResponseKind::Step => "step",
            ResponseKind::Impulse => "impulse",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseCurve {
    pub values: Vec<f64>,
    pub sample_period: f64,
    pub output: usize,
    pub input: usize,
    pub kind: ResponseKind,
}

/// Anything the benchmark can compare.
#[derive(Debug, Clone, Copy)]
pub enum Model<'a> {
    Transfer(&'a TransferMatrixModel),
    Arx(&'a ArxModel),
}

impl Model<'_> {
    pub fn outputs(&self) -> usize {
        match self {
            Model::Transfer(t) => t.outputs(),
            Model::Arx(a) => a.outputs(),
        }
    }

    pub fn inputs(&self) -> usize {
        match self {
            Model::Transfer(t) => t.inputs(),
            Model::Arx(a) => a.inputs(),
        }
    }

    /// Step responses of every output to `input`, `samples + 1` values each.
    fn step_rows(&self, input: usize, samples: usize, dt: f64) -> Vec<Vec<f64>> {
        match self {
            Model::Transfer(t) => (0..t.outputs())
                .map(|o| {
                    let ch = t.channel(o, input);
                    (0..=samples)
                        .map(|k| analytic_step_response(ch, k as f64 * dt))
                        .collect()
                })
                .collect(),
            Model::Arx(a) => {
                let s = a.step_responses(input, samples);
                (0..a.outputs()).map(|o| s.row(o).iter().copied().collect()).collect()
            }
        }
    }

    pub fn response(&self, kind: ResponseKind, output: usize, input: usize, samples: usize, dt: f64) -> ResponseCurve {
        let values = match (kind, self) {
            (ResponseKind::Step, _) => self.step_rows(input, samples, dt).swap_remove(output),
            (ResponseKind::Impulse, Model::Transfer(t)) => {
                let ch = t.channel(output, input);
                (0..=samples).map(|k| dt * ch.impulse_response(k as f64 * dt)).collect()
            }
            (ResponseKind::Impulse, Model::Arx(a)) => a.impulse_response(input, output, samples),
        };
        ResponseCurve {
            values,
            sample_period: dt,
            output,
            input,
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkResult {
    /// Sum of squared step-response differences over all channels and samples.
    pub e: f64,
    /// Contribution of each channel, indexed `[output][input]`.
    pub per_channel: Vec<Vec<f64>>,
    pub horizon: f64,
}

/// Compare step responses of `candidate` against the analytic responses of
/// `truth` at `k = 0..=horizon/dt`.
pub fn step_benchmark(
    truth: &TransferMatrixModel,
    candidate: Model<'_>,
    horizon: f64,
    dt: f64,
) -> Result<BenchmarkResult> {
    if candidate.outputs() != truth.outputs() || candidate.inputs() != truth.inputs() {
        return Err(Error::Dimension(format!(
            "truth is {}x{}, candidate is {}x{}",
            truth.outputs(),
            truth.inputs(),
            candidate.outputs(),
            candidate.inputs()
        )));
    }
    if let Model::Arx(a) = candidate {
        if (a.sample_period() - dt).abs() > 1e-12 {
            return Err(Error::Dimension(format!(
                "ARX sample period {} differs from the benchmark's {dt}",
                a.sample_period()
            )));
        }
    }
    if !(horizon > 0.0) || !is_multiple(horizon, dt) {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} must be a positive multiple of {dt}"
        )));
    }
    let samples = periods(horizon, dt);
    let reference = Model::Transfer(truth);
    let mut per_channel = vec![vec![0.0; truth.inputs()]; truth.outputs()];
    #[allow(clippy::needless_range_loop)] // j indexes inputs, not per_channel rows
    for j in 0..truth.inputs() {
        let want = reference.step_rows(j, samples, dt);
        let got = candidate.step_rows(j, samples, dt);
        for (i, (w, g)) in want.iter().zip(&got).enumerate() {
            per_channel[i][j] = w.iter().zip(g).map(|(a, b)| (a - b).powi(2)).sum();
        }
    }
    Ok(BenchmarkResult {
        e: per_channel.iter().flatten().sum(),
        per_channel,
        horizon,
    })
}

/// Mean of the last 5% of a step curve (at least one sample).
pub fn final_gain(curve: &ResponseCurve) -> f64 {
    let n = curve.values.len();
    if n == 0 {
        return 0.0;
    }
    let tail = ((n as f64 * 0.05).round() as usize).clamp(1, n);
    curve.values[n - tail..].iter().sum::<f64>() / tail as f64
}

/// Time of the largest-magnitude sample of an impulse curve, earliest on ties.
pub fn peak_delay(curve: &ResponseCurve) -> f64 {
    let mut best = 0;
    for (k, v) in curve.values.iter().enumerate() {
        if v.abs() > curve.values[best].abs() {
            best = k;
        }
    }
    best as f64 * curve.sample_period
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub e: f64,
}

/// Benchmark every estimate of a path against `truth`.
pub fn sweep_estimates(
    truth: &TransferMatrixModel,
    estimates: &[MpmEstimate],
    horizon: f64,
) -> Result<Vec<SweepPoint>> {
    estimates
        .iter()
        .map(|est| {
            let dt = est.corrected.sample_period();
            Ok(SweepPoint {
                lambda: est.lambda,
                e: step_benchmark(truth, Model::Arx(&est.corrected), horizon, dt)?.e,
            })
        })
        .collect()
}

/// Fit on the merged datasets at every lambda of `grid` and benchmark each corrected model.
pub fn lambda_sweep(
    truth: &TransferMatrixModel,
    d1: &RegressionDataset,
    d2: &RegressionDataset,
    base: &ArxModel,
    grid: &[f64],
    options: &LassoOptions,
    horizon: f64,
) -> Result<Vec<SweepPoint>> {
    let merged = d1.merge(d2)?;
    let mut ascending = grid.to_vec();
    ascending.sort_by(f64::total_cmp);
    ascending.dedup();
    let path = estimate_path(&merged, base, &ascending, options)?;
    sweep_estimates(truth, &path, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{apply_mismatch, wood_berry_nominal, MismatchSpec};

    fn curve(values: Vec<f64>) -> ResponseCurve {
        ResponseCurve {
            values,
            sample_period: 0.2,
            output: 0,
            input: 0,
            kind: ResponseKind::Impulse,
        }
    }

    #[test]
    fn identical_models_score_zero() {
        let g0 = wood_berry_nominal();
        let r = step_benchmark(&g0, Model::Transfer(&g0), 100.0, 0.2).unwrap();
        assert_eq!(r.e, 0.0);
        assert!(r.per_channel.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn gain_mismatch_closed_form() {
        let g0 = wood_berry_nominal();
        let gain = apply_mismatch(&g0, &MismatchSpec::wood_berry_gain()).unwrap();
        let r = step_benchmark(&gain, Model::Transfer(&g0), 100.0, 0.2).unwrap();
        let channel_sum = |dk: f64, t: f64, l: f64| -> f64 {
            (0..=500)
                .map(|k| k as f64 * 0.2)
                .filter(|&t_k| t_k >= l)
                .map(|t_k| (dk * (1.0 - (-(t_k - l) / t).exp())).powi(2))
                .sum()
        };
        let expect = channel_sum(6.4, 16.7, 1.0) + channel_sum(3.3, 10.9, 7.0);
        assert!((r.e - expect).abs() < 1e-9 * expect, "{} vs {expect}", r.e);
        assert_eq!(r.per_channel[0][1], 0.0);
        assert!((r.e - r.per_channel.iter().flatten().sum::<f64>()).abs() == 0.0);
    }

    #[test]
    fn pure_gain_error_scales_quadratically() {
        let g0 = wood_berry_nominal();
        let contribution = |delta: f64| {
            let mut spec = MismatchSpec::none(2, 2);
            spec.gain_deltas[1][0] = delta;
            let cand = apply_mismatch(&g0, &spec).unwrap();
            step_benchmark(&g0, Model::Transfer(&cand), 100.0, 0.2)
                .unwrap()
                .per_channel[1][0]
        };
        let ch = g0.channel(1, 0);
        let unit: f64 = (0..=500)
            .map(|k| (analytic_step_response(ch, k as f64 * 0.2) / ch.gain).powi(2))
            .sum();
        for delta in [0.1, 0.5, 2.0] {
            assert!((contribution(delta) - delta * delta * unit).abs() < 1e-9 * unit);
        }
    }

    #[test]
    fn dimension_and_horizon_checks() {
        let g0 = wood_berry_nominal();
        let arx = ArxModel::zeros(1, 2, 5, 0.2).unwrap();
        assert!(matches!(
            step_benchmark(&g0, Model::Arx(&arx), 100.0, 0.2),
            Err(Error::Dimension(_))
        ));
        assert!(step_benchmark(&g0, Model::Transfer(&g0), 100.1, 0.2).is_err());
    }

    #[test]
    fn zero_arx_against_truth_is_sum_of_squares() {
        let g0 = wood_berry_nominal();
        let arx = ArxModel::zeros(2, 2, 5, 0.2).unwrap();
        let r = step_benchmark(&g0, Model::Arx(&arx), 100.0, 0.2).unwrap();
        let mut expect = 0.0;
        for ((i, j), ch) in g0.channels() {
            let s: f64 = (0..=500)
                .map(|k| analytic_step_response(ch, k as f64 * 0.2).powi(2))
                .sum();
            assert!((r.per_channel[i][j] - s).abs() < 1e-9 * s);
            expect += s;
        }
        assert!((r.e - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn final_gain_examples() {
        let g0 = wood_berry_nominal();
        let step = Model::Transfer(&g0).response(ResponseKind::Step, 0, 0, 500, 0.2);
        assert_eq!(step.values.len(), 501);
        let fg = final_gain(&step);
        assert!((fg - 12.8).abs() < 0.045, "{fg}");
        assert_eq!(final_gain(&curve(vec![0.0; 20])), 0.0);
        // six time constants past the delay of channel (2,1)
        let ch = g0.channel(1, 0);
        let samples = ((ch.dead_time + 7.0 * ch.time_constant) / 0.2).round() as usize;
        let long = Model::Transfer(&g0).response(ResponseKind::Step, 1, 0, samples, 0.2);
        assert!((final_gain(&long) - ch.gain).abs() < 0.003 * ch.gain.abs());
    }

    #[test]
    fn peak_delay_examples() {
        let g0 = wood_berry_nominal();
        let imp = Model::Transfer(&g0).response(ResponseKind::Impulse, 1, 0, 500, 0.2);
        assert_eq!(peak_delay(&imp), 7.0);
        for ((i, j), ch) in g0.channels() {
            let c = Model::Transfer(&g0).response(ResponseKind::Impulse, i, j, 500, 0.2);
            assert!((peak_delay(&c) - ch.dead_time).abs() <= 0.2 + 1e-12);
        }
        let mut spike = vec![0.0; 30];
        spike[10] = -1.0;
        assert_eq!(peak_delay(&curve(spike)), 2.0);
        let mut tie = vec![0.0; 30];
        tie[4] = 1.0;
        tie[9] = -1.0;
        assert!((peak_delay(&curve(tie)) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn exact_arx_matches_truth() {
        let g0 = wood_berry_nominal();
        let arx = ArxModel::exact_from_plant(&g0, 0.2, 60).unwrap();
        let r = step_benchmark(&g0, Model::Arx(&arx), 100.0, 0.2).unwrap();
        assert!(r.e < 1e-12, "{}", r.e);
        let imp = Model::Arx(&arx).response(ResponseKind::Impulse, 0, 0, 500, 0.2);
        // the pulse response peaks at the first sample after the 1.0 min delay
        assert!((peak_delay(&imp) - 1.2).abs() < 1e-12);
    }
}
