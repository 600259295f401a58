//! C interface to `mle-core`.
//!
//! Every fallible function returns an [`MleStatus`] and writes results through
//! out-pointers. On failure the message is kept per thread and can be read with
//! [`mle_last_error_message`]. Objects are opaque handles owned by the caller
//! and released with the matching `*_free` function; strings returned by the
//! library are released with [`mle_string_free`].
//!
//! Indices of outputs and inputs are zero-based.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mle_core::arx::ArxModel;
use mle_core::bench::{step_benchmark, Model};
use mle_core::io::{record_from_csv, record_to_csv};
use mle_core::mle::{run_mle_pipeline, CvOptions, CvReport};
use mle_core::scenario::Scenario;
use mle_core::sim::{run_closed_loop, SimulationRecord};
use mle_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MleStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    BufferTooSmall = 3,
    InvalidModel = 4,
    NonCommensurate = 5,
    Dimension = 6,
    InvalidArgument = 7,
    NotConverged = 8,
    Singular = 9,
    WindowOutOfRange = 10,
    Config = 11,
    Parse = 12,
    Io = 13,
    Panic = 14,
}

/// A simulation scenario: plant, mismatch, controller, noise and estimation settings.
pub struct MleScenario(Scenario);

/// A closed-loop record of inputs, outputs and references.
pub struct MleRecord(SimulationRecord);

/// An ARX model.
pub struct MleArxModel(ArxModel);

/// Result of an estimation: the cross-validation report and the corrected model.
pub struct MleReport(CvReport);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MleArxShape {
    pub outputs: usize,
    pub inputs: usize,
    pub order: usize,
    pub sample_period: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: MleStatus,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.kind() {
            "invalid_model" => MleStatus::InvalidModel,
            "non_commensurate" => MleStatus::NonCommensurate,
            "dimension" => MleStatus::Dimension,
            "invalid_argument" => MleStatus::InvalidArgument,
            "not_converged" => MleStatus::NotConverged,
            "singular" => MleStatus::Singular,
            "window_out_of_range" => MleStatus::WindowOutOfRange,
            "config" => MleStatus::Config,
            "parse" => MleStatus::Parse,
            _ => MleStatus::Io,
        };
        Failure {
            status,
            message: e.to_string(),
        }
    }
}

fn fail(status: MleStatus, message: impl Into<String>) -> Failure {
    Failure {
        status,
        message: message.into(),
    }
}

fn set_last_error(message: Option<String>) {
    // interior NULs cannot cross into C; replace them rather than drop the message
    let message = message.map(|m| CString::new(m.replace('\0', " ")).expect("NULs removed"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = message);
}

/// Run `body`, turning errors and panics into a status and a stored message.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> MleStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error(None);
            MleStatus::Ok
        }
        Ok(Err(f)) => {
            set_last_error(Some(f.message));
            f.status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(Some(format!("internal panic: {message}")));
            MleStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(MleStatus::NullPointer, format!("{name} is null")))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(MleStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(MleStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(MleStatus::NullPointer, "output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(MleStatus::NullPointer, "output pointer is null"));
    }
    *out = CString::new(s)
        .map_err(|e| fail(MleStatus::InvalidArgument, e.to_string()))?
        .into_raw();
    Ok(())
}

unsafe fn fill(buffer: *mut f64, len: usize, values: &[f64]) -> Result<(), Failure> {
    if buffer.is_null() {
        return Err(fail(MleStatus::NullPointer, "buffer is null"));
    }
    if len < values.len() {
        return Err(fail(
            MleStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", values.len()),
        ));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buffer, values.len());
    Ok(())
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn mle_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mle_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Built-in scenario `"gain"`, `"delay"` or `"null"` with the given noise seed.
///
/// # Safety
/// `id` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mle_scenario_builtin(id: *const c_char, seed: u64, out: *mut *mut MleScenario) -> MleStatus {
    guard(|| {
        let id = text(id, "id")?;
        let s = Scenario::builtin(id, seed)
            .ok_or_else(|| fail(MleStatus::InvalidArgument, format!("unknown scenario id '{id}'")))?;
        put(out, MleScenario(s))
    })
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mle_scenario_from_json(json: *const c_char, out: *mut *mut MleScenario) -> MleStatus {
    guard(|| {
        let s = Scenario::from_json(text(json, "json")?, "<json>")?;
        put(out, MleScenario(s))
    })
}

/// # Safety
/// `scenario` must be a live handle; `out` must be writable. Free the string with [`mle_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mle_scenario_to_json(scenario: *const MleScenario, out: *mut *mut c_char) -> MleStatus {
    guard(|| put_string(out, borrow(scenario, "scenario")?.0.to_json()))
}

/// # Safety
/// `scenario` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mle_scenario_free(scenario: *mut MleScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Simulate closed-loop run `run` (zero-based) of the scenario.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mle_scenario_simulate(
    scenario: *const MleScenario,
    run: usize,
    out: *mut *mut MleRecord,
) -> MleStatus {
    guard(|| {
        let s = &borrow(scenario, "scenario")?.0;
        if run >= s.runs.len() {
            return Err(fail(
                MleStatus::InvalidArgument,
                format!("run {run} out of range, the scenario has {}", s.runs.len()),
            ));
        }
        put(out, MleRecord(run_closed_loop(s, run)?))
    })
}

/// Base ARX model of the scenario's nominal plant.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mle_scenario_base_model(
    scenario: *const MleScenario,
    out: *mut *mut MleArxModel,
) -> MleStatus {
    guard(|| put(out, MleArxModel(borrow(scenario, "scenario")?.0.base_model()?)))
}

/// # Safety
/// `csv` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mle_record_from_csv(csv: *const c_char, out: *mut *mut MleRecord) -> MleStatus {
    guard(|| put(out, MleRecord(record_from_csv(text(csv, "csv")?, "<csv>")?)))
}

/// # Safety
/// `record` must be a live handle; `out` must be writable. Free the string with [`mle_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mle_record_to_csv(record: *const MleRecord, out: *mut *mut c_char) -> MleStatus {
    guard(|| put_string(out, record_to_csv(&borrow(record, "record")?.0)))
}

/// Number of samples in the record, or 0 for a null handle.
///
/// # Safety
/// `record` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mle_record_len(record: *const MleRecord) -> usize {
    record.as_ref().map_or(0, |r| r.0.len())
}

/// # Safety
/// `record` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mle_record_free(record: *mut MleRecord) {
    if !record.is_null() {
        drop(Box::from_raw(record));
    }
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mle_arx_from_json(json: *const c_char, out: *mut *mut MleArxModel) -> MleStatus {
    guard(|| put(out, MleArxModel(ArxModel::from_json(text(json, "json")?)?)))
}

/// # Safety
/// `model` must be a live handle; `out` must be writable. Free the string with [`mle_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mle_arx_to_json(model: *const MleArxModel, out: *mut *mut c_char) -> MleStatus {
    guard(|| put_string(out, borrow(model, "model")?.0.to_json()))
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mle_arx_shape(model: *const MleArxModel, out: *mut MleArxShape) -> MleStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        if out.is_null() {
            return Err(fail(MleStatus::NullPointer, "output pointer is null"));
        }
        *out = MleArxShape {
            outputs: m.outputs(),
            inputs: m.inputs(),
            order: m.order(),
            sample_period: m.sample_period(),
        };
        Ok(())
    })
}

/// Copy the coefficient matrix, row-major, into `buffer` of `len` values.
/// It needs `outputs * order * (inputs + outputs)` values.
///
/// # Safety
/// `model` must be a live handle; `buffer` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mle_arx_coefficients(model: *const MleArxModel, buffer: *mut f64, len: usize) -> MleStatus {
    guard(|| {
        let c = borrow(model, "model")?.0.coefficients();
        let row_major: Vec<f64> = c.transpose().as_slice().to_vec();
        fill(buffer, len, &row_major)
    })
}

/// First `samples` values of the unit step response from `input` to `output`,
/// starting at `k = 0`.
///
/// # Safety
/// `model` must be a live handle; `buffer` must hold `samples` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mle_arx_step_response(
    model: *const MleArxModel,
    output: usize,
    input: usize,
    samples: usize,
    buffer: *mut f64,
) -> MleStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        if output >= m.outputs() || input >= m.inputs() {
            return Err(fail(
                MleStatus::InvalidArgument,
                format!(
                    "channel ({output},{input}) outside a {}x{} model",
                    m.outputs(),
                    m.inputs()
                ),
            ));
        }
        if samples == 0 {
            return Ok(());
        }
        fill(buffer, samples, &m.step_response(input, output, samples - 1))
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mle_arx_free(model: *mut MleArxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Estimate the mismatch of `base` from two records using the scenario's
/// window, lambda grid and solver settings.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mle_estimate(
    scenario: *const MleScenario,
    record1: *const MleRecord,
    record2: *const MleRecord,
    base: *const MleArxModel,
    out: *mut *mut MleReport,
) -> MleStatus {
    guard(|| {
        let s = &borrow(scenario, "scenario")?.0;
        let (r1, r2) = (&borrow(record1, "record1")?.0, &borrow(record2, "record2")?.0);
        let base = &borrow(base, "base")?.0;
        let options = CvOptions {
            lasso: s.lasso_options(),
            include_penalty: s.mle.include_penalty,
        };
        let report = run_mle_pipeline(
            r1,
            r2,
            s.mle.t_r,
            s.mle.half_width,
            base,
            &s.mle.grid.values(),
            &options,
        )?;
        put(out, MleReport(report))
    })
}

/// Cross-validated lambda of the report, or NaN for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mle_report_lambda_star(report: *const MleReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.0.lambda_star)
}

/// Corrected model at the cross-validated lambda, as a new handle.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mle_report_corrected_model(report: *const MleReport, out: *mut *mut MleArxModel) -> MleStatus {
    guard(|| {
        let r = &borrow(report, "report")?.0;
        put(out, MleArxModel(r.final_estimate.corrected.clone()))
    })
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mle_report_free(report: *mut MleReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Step-response error of `model` against the scenario's true plant over the
/// scenario's benchmark horizon.
///
/// # Safety
/// Both handles must be live; `error` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mle_bench_step(
    scenario: *const MleScenario,
    model: *const MleArxModel,
    error: *mut f64,
) -> MleStatus {
    guard(|| {
        let s = &borrow(scenario, "scenario")?.0;
        let m = &borrow(model, "model")?.0;
        if error.is_null() {
            return Err(fail(MleStatus::NullPointer, "output pointer is null"));
        }
        let result = step_benchmark(&s.truth()?, Model::Arx(m), s.benchmark.horizon, m.sample_period())?;
        *error = result.e;
        Ok(())
    })
}
