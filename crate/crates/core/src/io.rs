//! File formats: record and response-curve CSV, JSON documents.
//!
//! Numbers are written in Rust's shortest round-trip form, so a record read
//! back from CSV is bit-identical to the one written.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::SimulationRecord;

/// Header of a record CSV for `m` inputs and `p` outputs.
pub fn record_header(inputs: usize, outputs: usize) -> Vec<String> {
    let mut h = vec!["t_min".to_string()];
    h.extend((1..=inputs).map(|j| format!("u{j}")));
    h.extend((1..=outputs).map(|i| format!("y{i}")));
    h.extend((1..=outputs).map(|i| format!("y{i}_clean")));
    h.extend((1..=outputs).map(|i| format!("r{i}")));
    h
}

pub fn record_to_csv(record: &SimulationRecord) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let (m, p) = (record.inputs_count(), record.outputs_count());
    w.write_record(record_header(m, p)).expect("in-memory write");
    for k in 0..record.len() {
        let mut row = vec![record.time(k).to_string()];
        row.extend(record.inputs.column(k).iter().map(f64::to_string));
        row.extend(record.outputs.column(k).iter().map(f64::to_string));
        row.extend(record.clean_outputs.column(k).iter().map(f64::to_string));
        row.extend(record.references.column(k).iter().map(f64::to_string));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// Parse a record CSV. The sample period is taken from the time column, which
/// must be uniformly spaced and start at zero. `source` names the file in errors.
pub fn record_from_csv(text: &str, source: &str) -> Result<SimulationRecord> {
    let parse_err = |line: usize, message: String| Error::Parse {
        file: source.into(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let m = header.iter().filter(|h| is_indexed(h, "u")).count();
    let p = header.iter().filter(|h| is_indexed(h, "r")).count();
    if p == 0 || m == 0 || header != record_header(m, p) {
        return Err(parse_err(
            1,
            format!("expected header {}", record_header(m.max(1), p.max(1)).join(",")),
        ));
    }

    let mut times = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len() - 1];
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let mut values = Vec::with_capacity(row.len());
        for (field, name) in row.iter().zip(&header) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("column {name}: '{field}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column {name}: non-finite value")));
            }
            values.push(v);
        }
        times.push((line, values[0]));
        for (c, v) in cols.iter_mut().zip(&values[1..]) {
            c.push(*v);
        }
    }
    if times.len() < 2 {
        return Err(parse_err(1, "a record needs at least two samples".into()));
    }
    let dt = times[1].1 - times[0].1;
    if times[0].1 != 0.0 || !(dt > 0.0) {
        return Err(parse_err(times[0].0, "time column must start at 0 and increase".into()));
    }
    for (k, &(line, t)) in times.iter().enumerate() {
        if (t - k as f64 * dt).abs() > 1e-6 * dt.max(1.0) {
            return Err(parse_err(line, format!("time {t} breaks the uniform spacing {dt}")));
        }
    }
    let n = times.len();
    let block = |start: usize, rows: usize| DMatrix::from_fn(rows, n, |i, k| cols[start + i][k]);
    SimulationRecord::new(
        (dt * 1e9).round() / 1e9,
        None,
        block(0, m),
        block(m, p),
        block(m + p, p),
        block(m + 2 * p, p),
    )
}

fn is_indexed(name: &str, prefix: &str) -> bool {
    name.strip_prefix(prefix)
        .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
}

/// `t_min,value` CSV of a sampled curve.
pub fn curve_to_csv(sample_period: f64, values: &[f64]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t_min", "value"]).expect("in-memory write");
    for (k, v) in values.iter().enumerate() {
        let t = (k as f64 * sample_period * 1e9).round() / 1e9;
        w.write_record([t.to_string(), v.to_string()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_record(path: &Path) -> Result<SimulationRecord> {
    record_from_csv(&read_text(path)?, &path.display().to_string())
}
