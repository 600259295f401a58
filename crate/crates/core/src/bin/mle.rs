//! `mle` command-line tool. Failures print `{"error":{"kind":..,"message":..}}`
//! on stderr and exit nonzero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use serde_json::{json, Value};

use mle_core::arx::ArxModel;
use mle_core::bench::{lambda_sweep, step_benchmark, Model};
use mle_core::io::{read_record, read_text, record_to_csv, to_json_pretty, write_text};
use mle_core::mle::{run_mle_pipeline, window_datasets, CvOptions};
use mle_core::plant::TransferMatrixModel;
use mle_core::reproduce::{reproduce, ReproduceOptions};
use mle_core::scenario::Scenario;
use mle_core::sim::run_closed_loop;
use mle_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mle",
    version,
    about = "Model-plant mismatch estimation for MPC-controlled processes"
)]
struct Cli {
    /// Seed overriding the scenario's noise seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every closed-loop experiment of a scenario and write record CSVs.
    Simulate {
        /// Scenario JSON file, or one of the built-in ids gain, delay, null.
        scenario: String,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Convert the scenario's nominal transfer matrix into its base ARX model.
    Convert {
        scenario: String,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Estimate the mismatch from two records and write the cross-validation report.
    Estimate {
        scenario: String,
        #[arg(long, num_args = 2, required = true)]
        records: Vec<PathBuf>,
        /// Base ARX model; converted from the scenario when omitted.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Benchmark the merged-data fit at every grid lambda against the scenario's true plant.
    CvSweep {
        scenario: String,
        #[arg(long, num_args = 2, required = true)]
        records: Vec<PathBuf>,
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Step-response benchmark of a model against a true plant; prints JSON.
    Bench {
        /// Transfer-matrix JSON, or a scenario (its simulated plant is used).
        #[arg(long)]
        truth: String,
        /// ARX or transfer-matrix JSON, or a scenario (its nominal model is used).
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 100.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0.2)]
        sample_period: f64,
    },
    /// Run the complete experiment set and write all artifacts.
    Reproduce {
        #[arg(short, long)]
        out: PathBuf,
        /// Only the zero-mismatch, noise-free control scenario.
        #[arg(long)]
        null: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            report("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            report("invalid_argument", &e.to_string());
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}

fn report(kind: &str, message: &str) {
    eprintln!(
        "{}",
        json!({ "error": { "kind": kind, "message": message.trim_end() } })
    );
}

fn load_scenario(arg: &str, seed: Option<u64>) -> Result<Scenario> {
    let path = Path::new(arg);
    let scenario = if !path.exists() {
        Scenario::builtin(arg, 0).ok_or_else(|| {
            Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or built-in scenario"),
            )
        })?
    } else {
        Scenario::from_json(&read_text(path)?, arg)?
    };
    Ok(match seed {
        Some(s) => scenario.with_seed(s),
        None => scenario,
    })
}

fn load_base(scenario: &Scenario, base: Option<&Path>) -> Result<ArxModel> {
    match base {
        Some(p) => ArxModel::from_json(&read_text(p)?).map_err(|e| e.in_stage(p.display().to_string())),
        None => scenario.base_model(),
    }
}

enum AnyModel {
    Transfer(TransferMatrixModel),
    Arx(ArxModel),
}

/// Load a model file, telling formats apart by their keys. A scenario yields
/// its simulated plant when `truth` is set and its nominal model otherwise.
fn load_model(arg: &str, truth: bool) -> Result<AnyModel> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(s) = Scenario::builtin(arg, 0) {
            return Ok(AnyModel::Transfer(if truth { s.truth()? } else { s.plant.nominal }));
        }
    }
    let text = read_text(path)?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: arg.into(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let has = |k: &str| value.get(k).is_some();
    if has("channels") {
        serde_json::from_value(value)
            .map(AnyModel::Transfer)
            .map_err(|e| Error::Parse {
                file: arg.into(),
                line: 0,
                message: e.to_string(),
            })
    } else if has("runs") || has("id") {
        let s = Scenario::from_json(&text, arg)?;
        Ok(AnyModel::Transfer(if truth { s.truth()? } else { s.plant.nominal }))
    } else {
        ArxModel::from_json(&text)
            .map(AnyModel::Arx)
            .map_err(|e| e.in_stage(arg))
    }
}

fn read_records(paths: &[PathBuf]) -> Result<(mle_core::sim::SimulationRecord, mle_core::sim::SimulationRecord)> {
    Ok((read_record(&paths[0])?, read_record(&paths[1])?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { scenario, out } => {
            let s = load_scenario(&scenario, cli.seed)?;
            for run in 0..s.runs.len() {
                let rec = run_closed_loop(&s, run)?;
                write_text(&out.join(format!("record_{}.csv", run + 1)), &record_to_csv(&rec))?;
            }
            write_text(&out.join("scenario.json"), &(s.to_json() + "\n"))?;
            write_text(&out.join("truth_model.json"), &to_json_pretty(&s.truth()?))?;
            info!("wrote {} records to {}", s.runs.len(), out.display());
        }
        Command::Convert { scenario, out } => {
            let s = load_scenario(&scenario, cli.seed)?;
            write_text(&out, &s.base_model()?.to_json())?;
        }
        Command::Estimate {
            scenario,
            records,
            base,
            out,
        } => {
            let s = load_scenario(&scenario, cli.seed)?;
            let base = load_base(&s, base.as_deref())?;
            let (r1, r2) = read_records(&records)?;
            let options = CvOptions {
                lasso: s.lasso_options(),
                include_penalty: s.mle.include_penalty,
            };
            let report = run_mle_pipeline(
                &r1,
                &r2,
                s.mle.t_r,
                s.mle.half_width,
                &base,
                &s.mle.grid.values(),
                &options,
            )?;
            let stem = out
                .file_stem()
                .map_or("report".into(), |s| s.to_string_lossy().into_owned());
            let model_name = format!("{stem}_model.json");
            write_text(
                &out.with_file_name(&model_name),
                &report.final_estimate.corrected.to_json(),
            )?;
            write_text(&out, &to_json_pretty(&report.to_file(&model_name)))?;
        }
        Command::CvSweep {
            scenario,
            records,
            base,
            out,
        } => {
            let s = load_scenario(&scenario, cli.seed)?;
            let base = load_base(&s, base.as_deref())?;
            let (r1, r2) = read_records(&records)?;
            let (d1, d2) = window_datasets(&r1, &r2, s.mle.t_r, s.mle.half_width, base.order())?;
            let sweep = lambda_sweep(
                &s.truth()?,
                &d1,
                &d2,
                &base,
                &s.mle.grid.values(),
                &s.lasso_options(),
                s.benchmark.horizon,
            )?;
            let mut text = String::from("lambda,E\n");
            for p in sweep {
                text.push_str(&format!("{},{}\n", p.lambda, p.e));
            }
            write_text(&out, &text)?;
        }
        Command::Bench {
            truth,
            model,
            horizon,
            sample_period,
        } => {
            let truth = match load_model(&truth, true)? {
                AnyModel::Transfer(t) => t,
                AnyModel::Arx(_) => {
                    return Err(Error::InvalidArgument("--truth must be a transfer-matrix model".into()));
                }
            };
            let candidate = load_model(&model, false)?;
            let candidate = match &candidate {
                AnyModel::Transfer(t) => Model::Transfer(t),
                AnyModel::Arx(a) => Model::Arx(a),
            };
            let result = step_benchmark(&truth, candidate, horizon, sample_period)?;
            print!("{}", to_json_pretty(&result));
        }
        Command::Reproduce { out, null } => {
            let summaries = reproduce(
                &out,
                ReproduceOptions {
                    seed: cli.seed.unwrap_or(0),
                    null,
                },
            )?;
            for s in summaries {
                info!(
                    "{}: lambda* = {}, E(r_hat_star) = {}",
                    s.scenario_id, s.lambda_star, s.e.r_hat_star
                );
            }
        }
    }
    Ok(())
}
