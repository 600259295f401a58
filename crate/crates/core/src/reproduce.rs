//! End-to-end experiments: simulate both runs, estimate the mismatch, sweep
//! lambda and benchmark the resulting models.
//!
//! Everything is computed first and written afterwards by a single writer, so
//! the files depend only on the scenario and seed. Wall-clock time goes to a
//! separate `timing.json` to keep `summary.json` reproducible byte for byte.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use log::info;
use serde::Serialize;

use crate::arx::ArxModel;
use crate::bench::{final_gain, peak_delay, step_benchmark, sweep_estimates, Model, ResponseKind, SweepPoint};
use crate::error::{Error, Result};
use crate::io::{curve_to_csv, record_to_csv, to_json_pretty, write_text};
use crate::mle::{cross_validate_with_path, estimate_path, window_datasets, CvOptions, CvReport, MpmEstimate};
use crate::plant::TransferMatrixModel;
use crate::scenario::{periods, Scenario};
use crate::sim::{run_closed_loop, SimulationRecord};

/// Names of the compared models in curve file names.
pub const MODEL_NAMES: [&str; 4] = ["g0", "truth", "r_hat_star", "r_hat_zero"];

/// Results of one scenario.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub scenario: Scenario,
    pub truth: TransferMatrixModel,
    pub base: ArxModel,
    pub records: Vec<SimulationRecord>,
    pub cv: CvReport,
    /// Benchmark of the merged-data fit at every grid lambda, ascending.
    pub sweep: Vec<SweepPoint>,
    /// Unregularized estimate on the merged data.
    pub r_hat_zero: MpmEstimate,
    pub e_g0: f64,
    pub e_base: f64,
    pub e_r_hat_star: f64,
    pub e_r_hat_zero: f64,
}

impl Experiment {
    pub fn r_hat_star(&self) -> &MpmEstimate {
        &self.cv.final_estimate
    }

    /// The four compared models in the order of [`MODEL_NAMES`].
    pub fn models(&self) -> [Model<'_>; 4] {
        [
            Model::Transfer(&self.scenario.plant.nominal),
            Model::Transfer(&self.truth),
            Model::Arx(&self.r_hat_star().corrected),
            Model::Arx(&self.r_hat_zero.corrected),
        ]
    }

    fn curve_samples(&self) -> usize {
        periods(self.scenario.benchmark.horizon, self.scenario.sample_period)
    }

    /// Final gain of channel `(output, input)` of `model`.
    pub fn final_gain(&self, model: Model<'_>, output: usize, input: usize) -> f64 {
        let dt = self.scenario.sample_period;
        final_gain(&model.response(ResponseKind::Step, output, input, self.curve_samples(), dt))
    }

    /// Peak delay in minutes of channel `(output, input)` of `model`.
    pub fn peak_delay(&self, model: Model<'_>, output: usize, input: usize) -> f64 {
        let dt = self.scenario.sample_period;
        peak_delay(&model.response(ResponseKind::Impulse, output, input, self.curve_samples(), dt))
    }

    pub fn summary(&self) -> Summary {
        let star = Model::Arx(&self.r_hat_star().corrected);
        let truth = Model::Transfer(&self.truth);
        let mut gains = BTreeMap::new();
        let mut delays = BTreeMap::new();
        for ((i, j), _) in self.truth.channels() {
            let key = format!("{}{}", i + 1, j + 1);
            let (estimated, true_gain) = (self.final_gain(star, i, j), self.final_gain(truth, i, j));
            gains.insert(
                key.clone(),
                GainEntry {
                    estimated,
                    truth: true_gain,
                    error: (estimated - true_gain).abs(),
                },
            );
            delays.insert(
                key,
                DelayEntry {
                    estimated_min: self.peak_delay(star, i, j),
                    truth_min: self.peak_delay(truth, i, j),
                },
            );
        }
        Summary {
            scenario_id: self.scenario.id.clone(),
            seed: self.scenario.seed(),
            lambda_star: self.cv.lambda_star,
            e: EValues {
                g0: self.e_g0,
                base: self.e_base,
                r_hat_star: self.e_r_hat_star,
                r_hat_zero: self.e_r_hat_zero,
            },
            delta_r_l1_norm: self.r_hat_star().delta_l1_norm(),
            gains,
            delays,
            warnings: self.cv.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EValues {
    pub g0: f64,
    /// The converted base model before correction.
    pub base: f64,
    pub r_hat_star: f64,
    pub r_hat_zero: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainEntry {
    pub estimated: f64,
    pub truth: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayEntry {
    pub estimated_min: f64,
    pub truth_min: f64,
}

/// Per-scenario `summary.json`. Channel keys are `"ij"` for output `i`, input `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario_id: String,
    pub seed: u64,
    pub lambda_star: f64,
    #[serde(rename = "E")]
    pub e: EValues,
    pub delta_r_l1_norm: f64,
    pub gains: BTreeMap<String, GainEntry>,
    pub delays: BTreeMap<String, DelayEntry>,
    pub warnings: Vec<String>,
}

/// Simulate the scenario's two runs and estimate, cross-validate and sweep against `base`.
pub fn run_experiment(scenario: &Scenario, base: &ArxModel) -> Result<Experiment> {
    if scenario.runs.len() != 2 {
        return Err(Error::config("runs", "the experiment needs exactly two runs"));
    }
    let id = scenario.id.as_str();
    let truth = scenario.truth()?;
    let (r1, r2) = rayon::join(|| run_closed_loop(scenario, 0), || run_closed_loop(scenario, 1));
    let records = vec![
        r1.map_err(|e| e.in_stage(format!("{id}: run 1")))?,
        r2.map_err(|e| e.in_stage(format!("{id}: run 2")))?,
    ];
    info!("{id}: simulated both runs");

    let mle = &scenario.mle;
    let (d1, d2) = window_datasets(&records[0], &records[1], mle.t_r, mle.half_width, base.order())
        .map_err(|e| e.in_stage(format!("{id}: datasets")))?;
    let grid = mle.grid.values();
    let options = CvOptions {
        lasso: scenario.lasso_options(),
        include_penalty: mle.include_penalty,
    };
    let (cv, mut path) = cross_validate_with_path(&d1, &d2, base, &grid, &options)
        .map_err(|e| e.in_stage(format!("{id}: cross-validation")))?;
    info!("{id}: lambda* = {}", cv.lambda_star);

    let horizon = scenario.benchmark.horizon;
    let dt = scenario.sample_period;
    let sweep = sweep_estimates(&truth, &path, horizon)?;
    let r_hat_zero = if path[0].lambda == 0.0 {
        path.swap_remove(0)
    } else {
        estimate_path(&d1.merge(&d2)?, base, &[0.0], &options.lasso)?.remove(0)
    };
    let bench = |m: Model<'_>| step_benchmark(&truth, m, horizon, dt).map(|r| r.e);
    Ok(Experiment {
        e_g0: bench(Model::Transfer(&scenario.plant.nominal))?,
        e_base: bench(Model::Arx(base))?,
        e_r_hat_star: bench(Model::Arx(&cv.final_estimate.corrected))?,
        e_r_hat_zero: bench(Model::Arx(&r_hat_zero.corrected))?,
        scenario: scenario.clone(),
        truth,
        base: base.clone(),
        records,
        cv,
        sweep,
        r_hat_zero,
    })
}

fn sweep_csv(exp: &Experiment) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["lambda", "E", "loss_fold1", "loss_fold2", "loss_sum"])
        .expect("in-memory write");
    let cv = &exp.cv;
    for (k, point) in exp.sweep.iter().enumerate() {
        w.write_record([
            point.lambda.to_string(),
            point.e.to_string(),
            cv.loss_fold1[k].to_string(),
            cv.loss_fold2[k].to_string(),
            cv.loss_sum[k].to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// Write every artifact of `exp` under `dir`.
pub fn write_experiment(dir: &Path, exp: &Experiment) -> Result<Summary> {
    for (k, rec) in exp.records.iter().enumerate() {
        write_text(&dir.join(format!("record_{}.csv", k + 1)), &record_to_csv(rec))?;
    }
    write_text(&dir.join("sweep.csv"), &sweep_csv(exp))?;
    write_text(
        &dir.join("model_r_hat_star.json"),
        &exp.r_hat_star().corrected.to_json(),
    )?;
    write_text(&dir.join("model_r_hat_zero.json"), &exp.r_hat_zero.corrected.to_json())?;
    write_text(
        &dir.join("cv_report.json"),
        &to_json_pretty(&exp.cv.to_file("model_r_hat_star.json")),
    )?;

    let dt = exp.scenario.sample_period;
    let samples = exp.curve_samples();
    for (name, model) in MODEL_NAMES.iter().zip(exp.models()) {
        for ((i, j), _) in exp.truth.channels() {
            for kind in [ResponseKind::Step, ResponseKind::Impulse] {
                let curve = model.response(kind, i, j, samples, dt);
                let file = format!("{}_{name}_{}{}.csv", kind.name(), i + 1, j + 1);
                write_text(&dir.join("curves").join(file), &curve_to_csv(dt, &curve.values))?;
            }
        }
    }
    let summary = exp.summary();
    write_text(&dir.join("summary.json"), &to_json_pretty(&summary))?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReproduceOptions {
    pub seed: u64,
    /// Run only the zero-mismatch, noise-free control scenario.
    pub null: bool,
}

#[derive(Debug, Serialize)]
struct Timing {
    runtime_sec: f64,
}

/// Run the gain and delay experiments (or the null one) and write everything under `out`.
///
/// Layout: `model_r.json` (converted base), `summary.json` (array of scenario
/// summaries), `timing.json`, and one directory per scenario holding records,
/// `sweep.csv`, `cv_report.json`, corrected models, `summary.json` and
/// `curves/{kind}_{model}_{ij}.csv`.
pub fn reproduce(out: &Path, options: ReproduceOptions) -> Result<Vec<Summary>> {
    let start = Instant::now();
    let scenarios = if options.null {
        vec![Scenario::no_mismatch(options.seed)]
    } else {
        vec![
            Scenario::gain_mismatch(options.seed),
            Scenario::delay_mismatch(options.seed),
        ]
    };
    // all built-in scenarios share one nominal plant and conversion settings
    let base = scenarios[0].base_model()?;
    info!("base model ready after {:.1} s", start.elapsed().as_secs_f64());

    let experiments = run_all(&scenarios, &base)?;
    let mut summaries = Vec::new();
    write_text(&out.join("model_r.json"), &base.to_json())?;
    for exp in &experiments {
        summaries.push(write_experiment(&out.join(&exp.scenario.id), exp)?);
    }
    write_text(&out.join("summary.json"), &to_json_pretty(&summaries))?;
    let timing = Timing {
        runtime_sec: start.elapsed().as_secs_f64(),
    };
    write_text(&out.join("timing.json"), &to_json_pretty(&timing))?;
    Ok(summaries)
}

fn run_all(scenarios: &[Scenario], base: &ArxModel) -> Result<Vec<Experiment>> {
    use rayon::prelude::*;
    scenarios.par_iter().map(|s| run_experiment(s, base)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ConversionMethod, GridSpec};

    fn small(mut s: Scenario) -> Scenario {
        s.horizon = 200.0;
        s.mle.t_r = 100.0;
        s.mle.half_width = 40.0;
        s.conversion.order = 40;
        s.conversion.method = ConversionMethod::Exact;
        s.runs[0].references[0][0].time = 100.0;
        s.runs[1].references[1][0].time = 100.0;
        s.mle.grid = GridSpec::Explicit {
            values: vec![0.0, 1e-4, 1e-2, 1.0],
        };
        s
    }

    #[test]
    fn small_null_experiment_recovers_no_correction() {
        let s = small(Scenario::no_mismatch(1));
        let base = s.base_model().unwrap();
        let exp = run_experiment(&s, &base).unwrap();
        assert_eq!(exp.sweep.len(), 4);
        assert!(exp.r_hat_star().delta_l1_norm() < 1e-3);
        assert!(exp.e_base < 1e-12);
        assert_eq!(exp.e_g0, 0.0);
        let summary = exp.summary();
        assert_eq!(summary.gains.len(), 4);
        assert_eq!(summary.delays["21"].truth_min, 7.0);
    }

    #[test]
    fn written_files_are_deterministic() {
        let s = small(Scenario::gain_mismatch(3));
        let base = s.base_model().unwrap();
        let exp = run_experiment(&s, &base).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_experiment(a.path(), &exp).unwrap();
        let again = run_experiment(&s, &base).unwrap();
        write_experiment(b.path(), &again).unwrap();
        let mut names = Vec::new();
        for entry in walk(a.path()) {
            let rel = entry.strip_prefix(a.path()).unwrap().to_path_buf();
            assert_eq!(
                std::fs::read(&entry).unwrap(),
                std::fs::read(b.path().join(&rel)).unwrap(),
                "{rel:?}"
            );
            names.push(rel.display().to_string());
        }
        assert!(names.contains(&"curves/impulse_r_hat_zero_22.csv".to_string()));
        assert!(names.contains(&"summary.json".to_string()));
        assert_eq!(names.iter().filter(|n| n.starts_with("curves/")).count(), 32);
        let summary = std::fs::read_to_string(a.path().join("summary.json")).unwrap();
        assert!(summary.contains("\"E\""));
        assert!(summary.contains("\"r_hat_star\""));
        // the largest lambda leaves the base untouched
        let last = exp.sweep.last().unwrap();
        assert_eq!(last.e, exp.e_base);
    }

    fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                out.extend(walk(&path));
            } else {
                out.push(path);
            }
        }
        out.sort();
        out
    }
}
