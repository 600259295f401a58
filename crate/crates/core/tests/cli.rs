use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use mle_core::arx::ArxModel;
use mle_core::io::to_json_pretty;
use mle_core::plant::wood_berry_nominal;
use mle_core::reproduce::{run_experiment, write_experiment};
use mle_core::scenario::Scenario;

fn mle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mle"))
        .args(args)
        .output()
        .expect("launch mle")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not error JSON ({e}): {text}"))
}

/// Gain-mismatch scenario shrunk to a few seconds: exact base of order 60,
/// 240-minute runs stepping at 120 min, five-point lambda grid.
fn small_scenario() -> Scenario {
    let mut v: Value = serde_json::from_str(&Scenario::gain_mismatch(7).to_json()).unwrap();
    v["horizon"] = 240.0.into();
    v["runs"][0]["references"][0][0]["time"] = 120.0.into();
    v["runs"][1]["references"][1][0]["time"] = 120.0.into();
    v["mle"]["t_r"] = 120.0.into();
    v["mle"]["half_width"] = 60.0.into();
    v["mle"]["grid"]["points"] = 5.into();
    v["conversion"]["method"] = "exact".into();
    v["conversion"]["order"] = 60.into();
    Scenario::from_json(&v.to_string(), "small").unwrap()
}

#[test]
fn bench_of_a_model_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("g0.json");
    fs::write(&model, to_json_pretty(&wood_berry_nominal())).unwrap();
    let out = mle(&["bench", "--truth", p(&model), "--model", p(&model)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let result: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(result["e"], 0.0);

    // the nominal model against the gain-mismatch truth is far from zero
    let out = mle(&["bench", "--truth", "gain", "--model", p(&model)]);
    let result: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(result["e"].as_f64().unwrap() > 1e4);
}

#[test]
fn convert_writes_a_full_order_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let out = mle(&["convert", "gain", "-o", p(&path)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let model = ArxModel::from_json(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(model.coefficients().len(), 1200);
    assert_eq!((model.outputs(), model.order(), model.regressor_len()), (2, 150, 600));
}

#[test]
fn usage_errors_exit_two_with_error_json() {
    let out = mle(&["simulate", "gain", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "usage");
}

#[test]
fn malformed_files_name_the_line_or_field() {
    let dir = tempfile::tempdir().unwrap();

    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{\n  \"id\": \"x\",\n  \"horizon\": ,\n}").unwrap();
    let out = mle(&["simulate", p(&broken), "-o", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_json(&out);
    assert_eq!(err["error"]["kind"], "parse");
    assert!(err["error"]["message"].as_str().unwrap().contains(":3:"), "{err}");

    let mut v: Value = serde_json::from_str(&small_scenario().to_json()).unwrap();
    v["mpc"]["control_horizon"] = 0.into();
    let invalid = dir.path().join("invalid.json");
    fs::write(&invalid, v.to_string()).unwrap();
    let out = mle(&["simulate", p(&invalid), "-o", p(dir.path())]);
    let err = error_json(&out);
    assert_eq!(err["error"]["kind"], "config");
    assert!(
        err["error"]["message"]
            .as_str()
            .unwrap()
            .contains("mpc.control_horizon"),
        "{err}"
    );

    let out = mle(&[
        "convert",
        p(&dir.path().join("missing.json")),
        "-o",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(error_json(&out)["error"]["kind"], "io");

    let record = dir.path().join("record.csv");
    fs::write(
        &record,
        "t_min,u1,u2,y1,y2,y1_clean,y2_clean,r1,r2\n0,0,0,0,0,0,0,0,0\n0.2,0,0,x,0,0,0,0,0\n",
    )
    .unwrap();
    let scenario = dir.path().join("small.json");
    fs::write(&scenario, small_scenario().to_json()).unwrap();
    let out = mle(&[
        "estimate",
        p(&scenario),
        "--records",
        p(&record),
        p(&record),
        "-o",
        p(&dir.path().join("r.json")),
    ]);
    let err = error_json(&out);
    assert_eq!(err["error"]["kind"], "parse");
    assert!(
        err["error"]["message"].as_str().unwrap().contains("record.csv:3"),
        "{err}"
    );
}

#[test]
fn simulate_then_estimate_matches_the_reproduce_path() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario();
    let scenario_path = dir.path().join("small.json");
    fs::write(&scenario_path, scenario.to_json()).unwrap();

    // command-line composition
    let sim_dir = dir.path().join("sim");
    let out = mle(&["simulate", p(&scenario_path), "-o", p(&sim_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (r1, r2) = (sim_dir.join("record_1.csv"), sim_dir.join("record_2.csv"));
    let report = dir.path().join("report.json");
    let out = mle(&[
        "estimate",
        p(&scenario_path),
        "--records",
        p(&r1),
        p(&r2),
        "-o",
        p(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // in-process experiment as run by `reproduce`
    let exp_dir = dir.path().join("exp");
    let exp = run_experiment(&scenario, &scenario.base_model().unwrap()).unwrap();
    write_experiment(&exp_dir, &exp).unwrap();

    for name in ["record_1.csv", "record_2.csv"] {
        assert_eq!(
            fs::read(sim_dir.join(name)).unwrap(),
            fs::read(exp_dir.join(name)).unwrap(),
            "{name}"
        );
    }
    assert_eq!(
        fs::read(dir.path().join("report_model.json")).unwrap(),
        fs::read(exp_dir.join("model_r_hat_star.json")).unwrap()
    );
    let mut cli: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let mut lib: Value = serde_json::from_slice(&fs::read(exp_dir.join("cv_report.json")).unwrap()).unwrap();
    cli["corrected_model"] = Value::Null;
    lib["corrected_model"] = Value::Null;
    assert_eq!(cli, lib);

    // the sweep command reproduces the E column of the experiment's sweep
    let sweep = dir.path().join("sweep.csv");
    let out = mle(&[
        "cv-sweep",
        p(&scenario_path),
        "--records",
        p(&r1),
        p(&r2),
        "-o",
        p(&sweep),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&sweep).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("lambda,E"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), exp.sweep.len());
    for ((lambda, e), point) in rows.iter().zip(&exp.sweep) {
        assert_eq!((*lambda, *e), (point.lambda, point.e));
    }
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let scenario_path = dir.path().join("small.json");
    fs::write(&scenario_path, small_scenario().to_json()).unwrap();
    let sim_dir = dir.path().join("sim");
    assert!(mle(&["simulate", p(&scenario_path), "-o", p(&sim_dir)])
        .status
        .success());
    let (r1, r2) = (sim_dir.join("record_1.csv"), sim_dir.join("record_2.csv"));
    let mut reports = Vec::new();
    for threads in ["1", "3"] {
        let report = dir.path().join(format!("report_{threads}.json"));
        let out = mle(&[
            "--threads",
            threads,
            "estimate",
            p(&scenario_path),
            "--records",
            p(&r1),
            p(&r2),
            "-o",
            p(&report),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        reports.push(fs::read(dir.path().join(format!("report_{threads}_model.json"))).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn seed_flag_overrides_the_scenario_seed() {
    let dir = tempfile::tempdir().unwrap();
    let scenario_path = dir.path().join("small.json");
    fs::write(&scenario_path, small_scenario().to_json()).unwrap();
    let run = |seed: &str, sub: &str| {
        let out_dir = dir.path().join(sub);
        assert!(mle(&["--seed", seed, "simulate", p(&scenario_path), "-o", p(&out_dir)])
            .status
            .success());
        fs::read(out_dir.join("record_1.csv")).unwrap()
    };
    assert_eq!(run("5", "a"), run("5", "b"));
    assert_ne!(run("5", "c"), run("6", "d"));
}
