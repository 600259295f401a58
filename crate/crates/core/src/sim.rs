//! Closed-loop runs of the MPC-controlled plant with measurement noise.
//!
//! Sample `k` sits at `t = k dt`. At every sample the noise-free plant output
//! is recorded together with its noisy measurement; at every control instant
//! the controller reads the noisy measurement and the scheduled reference and
//! commits the input for the following period. `inputs[k]` is the input held
//! over `[k dt, (k+1) dt)`.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mpc::Controller;
use crate::plant::PlantSimulator;
use crate::rng::{self, Purpose};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRecord {
    pub sample_period: f64,
    /// Seed of the noise stream, when known (records read back from CSV have none).
    pub seed: Option<u64>,
    /// `m x n`, column `k` is the input held from sample `k`.
    pub inputs: DMatrix<f64>,
    /// `p x n` noisy measurements.
    pub outputs: DMatrix<f64>,
    /// `p x n` noise-free plant outputs.
    pub clean_outputs: DMatrix<f64>,
    /// `p x n` references.
    pub references: DMatrix<f64>,
}

impl SimulationRecord {
    pub fn new(
        sample_period: f64,
        seed: Option<u64>,
        inputs: DMatrix<f64>,
        outputs: DMatrix<f64>,
        clean_outputs: DMatrix<f64>,
        references: DMatrix<f64>,
    ) -> Result<Self> {
        let n = inputs.ncols();
        let p = outputs.nrows();
        if outputs.ncols() != n || clean_outputs.ncols() != n || references.ncols() != n {
            return Err(Error::Dimension("record columns differ in length".into()));
        }
        if clean_outputs.nrows() != p || references.nrows() != p {
            return Err(Error::Dimension("record output blocks differ in width".into()));
        }
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(Error::InvalidArgument("sample period must be positive".into()));
        }
        Ok(SimulationRecord {
            sample_period,
            seed,
            inputs,
            outputs,
            clean_outputs,
            references,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn outputs_count(&self) -> usize {
        self.outputs.nrows()
    }

    pub fn inputs_count(&self) -> usize {
        self.inputs.nrows()
    }

    /// Time of sample `k` in minutes, rounded to 1e-9 so it prints cleanly.
    pub fn time(&self, k: usize) -> f64 {
        (k as f64 * self.sample_period * 1e9).round() / 1e9
    }
}

/// Run closed-loop experiment `run` of `scenario`.
pub fn run_closed_loop(scenario: &Scenario, run: usize) -> Result<SimulationRecord> {
    if run >= scenario.runs.len() {
        return Err(Error::config("runs", format!("scenario has no run {run}")));
    }
    let dt = scenario.sample_period;
    let nominal = &scenario.plant.nominal;
    let truth = scenario.truth()?;
    let (p, m) = (truth.outputs(), truth.inputs());
    let mut plant = PlantSimulator::new(&truth, dt)?;
    let mut controller = Controller::new(nominal, &scenario.mpc, dt)?;
    let substeps = controller.substeps();

    let sigma = scenario.noise.variance.sqrt();
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::config("noise.variance", e.to_string()))?;
    let mut rng = rng::stream(scenario.seed(), Purpose::MeasurementNoise(run as u32));

    let n = scenario.samples();
    let mut inputs = DMatrix::zeros(m, n);
    let mut outputs = DMatrix::zeros(p, n);
    let mut clean = DMatrix::zeros(p, n);
    let mut references = DMatrix::zeros(p, n);
    let mut y = plant.output();
    let mut held = vec![0.0; m];
    for k in 0..n {
        let t = (k as f64 * dt * 1e9).round() / 1e9;
        let r = scenario.reference(run, t);
        let measured: Vec<f64> = y.iter().map(|&v| v + noise.sample(&mut rng)).collect();
        if k % substeps == 0 {
            held = controller
                .control_step(&measured, &r)
                .map_err(|e| e.in_stage(format!("controller at t = {t} min")))?
                .as_slice()
                .to_vec();
        }
        for i in 0..p {
            outputs[(i, k)] = measured[i];
            clean[(i, k)] = y[i];
            references[(i, k)] = r[i];
        }
        for j in 0..m {
            inputs[(j, k)] = held[j];
        }
        y = plant.advance(&held);
    }
    SimulationRecord::new(dt, Some(scenario.seed()), inputs, outputs, clean, references)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{RunSpec, StepEvent};

    fn short(mut s: Scenario, horizon: f64) -> Scenario {
        s.horizon = horizon;
        s.mle.t_r = horizon / 2.0;
        s.mle.half_width = 0.0;
        s.conversion.order = 10;
        s
    }

    #[test]
    fn rest_stays_at_rest() {
        let mut s = short(Scenario::no_mismatch(0), 100.0);
        s.runs = vec![RunSpec {
            references: vec![vec![], vec![]],
        }];
        let rec = run_closed_loop(&s, 0).unwrap();
        assert_eq!(rec.len(), 501);
        assert!(rec.clean_outputs.iter().all(|&v| v == 0.0));
        assert!(rec.inputs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standard_run_shape_and_timing() {
        let s = Scenario::gain_mismatch(5);
        let rec = run_closed_loop(&s, 0).unwrap();
        assert_eq!(rec.len(), 5001);
        assert_eq!(rec.time(5000), 1000.0);
        for k in 1..rec.len() {
            if k % 5 != 0 {
                assert_eq!(rec.inputs.column(k), rec.inputs.column(k - 1));
            }
        }
        // reference columns reproduce the schedule exactly
        for k in 0..rec.len() {
            let expect = if k >= 2500 { 1.0 } else { 0.0 };
            assert_eq!(rec.references[(0, k)], expect);
            assert_eq!(rec.references[(1, k)], 0.0);
        }
        let again = run_closed_loop(&s, 0).unwrap();
        assert_eq!(rec, again);
    }

    #[test]
    fn noise_matches_configured_variance() {
        let s = Scenario::gain_mismatch(11);
        let rec = run_closed_loop(&s, 1).unwrap();
        for i in 0..2 {
            let d = rec.outputs.row(i) - rec.clean_outputs.row(i);
            let mean = d.mean();
            let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
            assert!((var - 0.001).abs() < 1e-4, "variance {var}");
        }
    }

    #[test]
    fn runs_use_distinct_noise() {
        let mut s = Scenario::no_mismatch(3);
        s.noise.variance = 0.001;
        s.runs[1] = s.runs[0].clone();
        let a = run_closed_loop(&s, 0).unwrap();
        let b = run_closed_loop(&s, 1).unwrap();
        assert_eq!(a.clean_outputs.column(0), b.clean_outputs.column(0));
        assert_ne!(a.outputs, b.outputs);
    }

    #[test]
    fn offset_free_tracking_on_own_model() {
        let mut s = Scenario::no_mismatch(0);
        s.runs = vec![RunSpec {
            references: vec![
                vec![StepEvent {
                    time: 500.0,
                    level: 1.0,
                }],
                vec![],
            ],
        }];
        let rec = run_closed_loop(&s, 0).unwrap();
        let at = |t: f64| (t / 0.2).round() as usize;
        for k in at(700.0)..rec.len() {
            assert!((rec.clean_outputs[(0, k)] - 1.0).abs() < 1e-3);
            assert!(rec.clean_outputs[(1, k)].abs() < 1e-3);
        }
    }

    #[test]
    fn delay_mismatch_loop_settles() {
        let mut s = Scenario::delay_mismatch(0);
        s.noise.variance = 0.0;
        for run in 0..2 {
            let rec = run_closed_loop(&s, run).unwrap();
            assert!(rec.clean_outputs.amax() < 3.0);
            for k in 4500..rec.len() {
                for i in 0..2 {
                    assert!((rec.clean_outputs[(i, k)] - rec.references[(i, k)]).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn unknown_run_is_rejected() {
        let s = Scenario::no_mismatch(0);
        assert!(matches!(run_closed_loop(&s, 2), Err(Error::Config { .. })));
    }
}
