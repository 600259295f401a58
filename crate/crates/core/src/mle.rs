//! Mismatch estimation from closed-loop data.
//!
//! Regression datasets are cut from a window of a closed-loop record around a
//! reference step. The correction `dR` to a base ARX model is fitted to the
//! base model's one-step residuals by lasso, one output row at a time, and the
//! penalty is chosen by two-fold cross-validation between two records.

use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::arx::ArxModel;
use crate::error::{Error, Result};
use crate::lasso::{least_squares, Design, LassoOptions};
use crate::scenario::{is_multiple, periods};
use crate::sim::SimulationRecord;

/// Lagged regressors and targets: column `c` of `x` holds
/// `[y(k-1); u(k-1); ...; y(k-d); u(k-d)]` and column `c` of `y` holds `y(k)`,
/// for `k = indices[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub indices: Vec<usize>,
}

impl RegressionDataset {
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Columns of `self` followed by those of `other`.
    pub fn merge(&self, other: &RegressionDataset) -> Result<RegressionDataset> {
        if self.x.nrows() != other.x.nrows() || self.y.nrows() != other.y.nrows() {
            return Err(Error::Dimension("datasets differ in shape".into()));
        }
        let n = self.len() + other.len();
        let join = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(a.nrows(), n);
            out.columns_mut(0, a.ncols()).copy_from(a);
            out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
            out
        };
        let mut indices = self.indices.clone();
        indices.extend_from_slice(&other.indices);
        Ok(RegressionDataset {
            x: join(&self.x, &other.x),
            y: join(&self.y, &other.y),
            indices,
        })
    }
}

/// Sample indices of `[t_r - half_width, t_r + half_width]`, checking that the
/// `order` samples before the window are also in the record.
pub fn extract_window(
    record: &SimulationRecord,
    t_r: f64,
    half_width: f64,
    order: usize,
) -> Result<RangeInclusive<usize>> {
    let dt = record.sample_period;
    let start = t_r - half_width;
    let end = t_r + half_width;
    if !(half_width >= 0.0) || !is_multiple(t_r, dt) || !is_multiple(half_width, dt) {
        return Err(Error::InvalidArgument(format!(
            "window centre {t_r} and half width {half_width} must be multiples of the sample period {dt}"
        )));
    }
    if start < order as f64 * dt - 1e-9 * dt {
        return Err(Error::WindowOutOfRange(format!(
            "window starts at {start} min but needs {order} samples of history"
        )));
    }
    let first = periods(start, dt);
    let last = periods(end, dt);
    if last >= record.len() {
        return Err(Error::WindowOutOfRange(format!(
            "window ends at {end} min, past the record end {} min",
            record.time(record.len().saturating_sub(1))
        )));
    }
    Ok(first..=last)
}

/// Assemble the regression dataset for target samples `range`, using the noisy outputs.
pub fn build_dataset(
    record: &SimulationRecord,
    range: RangeInclusive<usize>,
    order: usize,
) -> Result<RegressionDataset> {
    let (p, m) = (record.outputs_count(), record.inputs_count());
    if order == 0 || *range.start() < order || *range.end() >= record.len() {
        return Err(Error::WindowOutOfRange(format!(
            "samples {}..={} with order {order} do not fit a record of {} samples",
            range.start(),
            range.end(),
            record.len()
        )));
    }
    let indices: Vec<usize> = range.collect();
    let n = indices.len();
    let w = p + m;
    let mut x = DMatrix::zeros(order * w, n);
    let mut y = DMatrix::zeros(p, n);
    for (c, &k) in indices.iter().enumerate() {
        for lag in 0..order {
            let src = k - 1 - lag;
            for i in 0..p {
                x[(lag * w + i, c)] = record.outputs[(i, src)];
            }
            for j in 0..m {
                x[(lag * w + p + j, c)] = record.inputs[(j, src)];
            }
        }
        y.set_column(c, &record.outputs.column(k));
    }
    Ok(RegressionDataset { x, y, indices })
}

/// A correction `dR` and the corrected model `R + dR`.
#[derive(Debug, Clone, PartialEq)]
pub struct MpmEstimate {
    pub lambda: f64,
    pub delta_r: DMatrix<f64>,
    pub corrected: ArxModel,
    /// Set when lambda = 0 fell back to a minimum-norm least-squares solution.
    pub rank_deficient: bool,
}

impl MpmEstimate {
    pub fn delta_l1_norm(&self) -> f64 {
        self.delta_r.iter().map(|v| v.abs()).sum()
    }
}

fn check_shapes(dataset: &RegressionDataset, base: &ArxModel) -> Result<()> {
    if dataset.x.nrows() != base.regressor_len() || dataset.y.nrows() != base.outputs() {
        return Err(Error::Dimension(format!(
            "dataset is {}x{} regressors / {} outputs, model expects {} / {}",
            dataset.x.nrows(),
            dataset.len(),
            dataset.y.nrows(),
            base.regressor_len(),
            base.outputs()
        )));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    Ok(())
}

/// Fit `dR` at every lambda of `grid` (any order) by warm-started descending
/// paths, one output row at a time. Results come back in the order of `grid`.
pub fn estimate_path(
    dataset: &RegressionDataset,
    base: &ArxModel,
    grid: &[f64],
    options: &LassoOptions,
) -> Result<Vec<MpmEstimate>> {
    check_shapes(dataset, base)?;
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    if let Some(bad) = grid.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and >= 0, got {bad}"
        )));
    }
    let p = base.outputs();
    let residual = &dataset.y - base.coefficients() * &dataset.x;

    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    let positive: Vec<usize> = order.iter().copied().filter(|&i| grid[i] > 0.0).collect();
    let has_zero = positive.len() < grid.len();

    let least = if has_zero {
        Some(least_squares(&dataset.x, &residual)?)
    } else {
        None
    };

    let design = if positive.is_empty() {
        None
    } else {
        Some(Design::new(&dataset.x, options.standardize))
    };
    let lambdas: Vec<f64> = positive.iter().map(|&i| grid[i]).collect();
    let rows: Vec<Vec<DVector<f64>>> = (0..p)
        .into_par_iter()
        .map(|row| -> Result<Vec<DVector<f64>>> {
            let Some(design) = &design else {
                return Ok(Vec::new());
            };
            let target = design.target(&dataset.x, &residual.row(row).transpose());
            let path = design
                .path(&target, &lambdas, options)
                .map_err(|e| e.in_stage(format!("output row {}", row + 1)))?;
            Ok(path.into_iter().map(|s| s.coefficients).collect())
        })
        .collect::<Result<_>>()?;

    let features = base.regressor_len();
    let mut out: Vec<Option<MpmEstimate>> = vec![None; grid.len()];
    for (slot, &gi) in positive.iter().enumerate() {
        let mut delta = DMatrix::zeros(p, features);
        for (r, row) in rows.iter().enumerate() {
            delta.row_mut(r).copy_from(&row[slot].transpose());
        }
        out[gi] = Some(make_estimate(base, grid[gi], delta, false)?);
    }
    if let Some(fit) = least {
        for gi in (0..grid.len()).filter(|&i| grid[i] == 0.0) {
            out[gi] = Some(make_estimate(base, 0.0, fit.coefficients.clone(), !fit.full_rank)?);
        }
    }
    Ok(out.into_iter().map(|e| e.expect("every grid point solved")).collect())
}

fn make_estimate(base: &ArxModel, lambda: f64, delta_r: DMatrix<f64>, rank_deficient: bool) -> Result<MpmEstimate> {
    let corrected = base.with_coefficients(base.coefficients() + &delta_r)?;
    Ok(MpmEstimate {
        lambda,
        delta_r,
        corrected,
        rank_deficient,
    })
}

/// Fit `dR` at a single lambda.
pub fn estimate_mpm(
    dataset: &RegressionDataset,
    base: &ArxModel,
    lambda: f64,
    options: &LassoOptions,
) -> Result<MpmEstimate> {
    Ok(estimate_path(dataset, base, &[lambda], options)?.remove(0))
}

/// `|Y - (R + dR) X|^2 / 2N`, plus `lambda |dR|_1` when `include_penalty`.
pub fn validation_loss(dataset: &RegressionDataset, estimate: &MpmEstimate, include_penalty: bool) -> f64 {
    let fit =
        (&dataset.y - estimate.corrected.coefficients() * &dataset.x).norm_squared() / (2.0 * dataset.len() as f64);
    if include_penalty {
        fit + estimate.lambda * estimate.delta_l1_norm()
    } else {
        fit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CvOptions {
    pub lasso: LassoOptions,
    pub include_penalty: bool,
}

#[derive(Debug, Clone)]
pub struct CvReport {
    /// Ascending.
    pub lambda_grid: Vec<f64>,
    /// Held-out loss on D2 of the fit on D1.
    pub loss_fold1: Vec<f64>,
    /// Held-out loss on D1 of the fit on D2.
    pub loss_fold2: Vec<f64>,
    pub loss_sum: Vec<f64>,
    /// `lambda |dR|_1` of each fold's fit, so the other loss convention can be recovered.
    pub penalty_fold1: Vec<f64>,
    pub penalty_fold2: Vec<f64>,
    pub include_penalty: bool,
    pub lambda_star: f64,
    /// Refit on the merged dataset at `lambda_star`.
    pub final_estimate: MpmEstimate,
    pub warnings: Vec<String>,
}

/// Serialized form of a [`CvReport`]; the corrected model is referenced by file name.
#[derive(Debug, Serialize)]
pub struct CvReportFile<'a> {
    pub lambda_grid: &'a [f64],
    pub loss_fold1: &'a [f64],
    pub loss_fold2: &'a [f64],
    pub loss_sum: &'a [f64],
    pub penalty_fold1: &'a [f64],
    pub penalty_fold2: &'a [f64],
    pub include_penalty: bool,
    pub lambda_star: f64,
    pub delta_r_l1_norm: f64,
    pub least_squares_rank_deficient: bool,
    pub corrected_model: String,
    pub warnings: &'a [String],
}

impl CvReport {
    pub fn to_file(&self, corrected_model: &str) -> CvReportFile<'_> {
        CvReportFile {
            lambda_grid: &self.lambda_grid,
            loss_fold1: &self.loss_fold1,
            loss_fold2: &self.loss_fold2,
            loss_sum: &self.loss_sum,
            penalty_fold1: &self.penalty_fold1,
            penalty_fold2: &self.penalty_fold2,
            include_penalty: self.include_penalty,
            lambda_star: self.lambda_star,
            delta_r_l1_norm: self.final_estimate.delta_l1_norm(),
            least_squares_rank_deficient: self.final_estimate.rank_deficient,
            corrected_model: corrected_model.into(),
            warnings: &self.warnings,
        }
    }
}

/// Index of the smallest value, ties going to the later (larger-lambda) entry.
fn argmin_last(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v <= values[best] {
            best = i;
        }
    }
    best
}

/// Two-fold cross-validation over `grid`, then a refit on the merged data.
pub fn cross_validate(
    d1: &RegressionDataset,
    d2: &RegressionDataset,
    base: &ArxModel,
    grid: &[f64],
    options: &CvOptions,
) -> Result<CvReport> {
    let folds = fold_stage(d1, d2, base, grid, options)?;
    let merged = d1.merge(d2)?;
    // refit along the same descending path the full sweep takes, stopping at lambda*
    let refit_grid: Vec<f64> = folds.lambda_grid[folds.star..].to_vec();
    let final_estimate = estimate_path(&merged, base, &refit_grid, &options.lasso)
        .map_err(|e| e.in_stage("merged refit"))?
        .remove(0);
    Ok(folds.into_report(final_estimate))
}

/// Cross-validation together with the merged-data fit at every grid lambda
/// (ascending). The report's final estimate is the path entry at lambda*, which
/// is bit-identical to the refit [`cross_validate`] performs.
pub fn cross_validate_with_path(
    d1: &RegressionDataset,
    d2: &RegressionDataset,
    base: &ArxModel,
    grid: &[f64],
    options: &CvOptions,
) -> Result<(CvReport, Vec<MpmEstimate>)> {
    let merged = d1.merge(d2)?;
    let (folds, path) = rayon::join(
        || fold_stage(d1, d2, base, grid, options),
        || estimate_path(&merged, base, &sorted_grid(grid), &options.lasso).map_err(|e| e.in_stage("merged path")),
    );
    let (folds, path) = (folds?, path?);
    let final_estimate = path[folds.star].clone();
    Ok((folds.into_report(final_estimate), path))
}

fn sorted_grid(grid: &[f64]) -> Vec<f64> {
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

struct FoldStage {
    lambda_grid: Vec<f64>,
    loss_fold1: Vec<f64>,
    loss_fold2: Vec<f64>,
    penalty_fold1: Vec<f64>,
    penalty_fold2: Vec<f64>,
    include_penalty: bool,
    star: usize,
    warnings: Vec<String>,
}

fn fold_stage(
    d1: &RegressionDataset,
    d2: &RegressionDataset,
    base: &ArxModel,
    grid: &[f64],
    options: &CvOptions,
) -> Result<FoldStage> {
    let lambda_grid = sorted_grid(grid);
    let mut warnings = Vec::new();
    if d1 == d2 {
        warnings.push("the two datasets are identical; validation loss equals training loss".to_string());
    }
    let (fold1, fold2) = rayon::join(
        || estimate_path(d1, base, &lambda_grid, &options.lasso).map_err(|e| e.in_stage("fold 1")),
        || estimate_path(d2, base, &lambda_grid, &options.lasso).map_err(|e| e.in_stage("fold 2")),
    );
    let (fold1, fold2) = (fold1?, fold2?);
    let penalty = |e: &MpmEstimate| e.lambda * e.delta_l1_norm();
    let loss_fold1: Vec<f64> = fold1
        .iter()
        .map(|e| validation_loss(d2, e, options.include_penalty))
        .collect();
    let loss_fold2: Vec<f64> = fold2
        .iter()
        .map(|e| validation_loss(d1, e, options.include_penalty))
        .collect();
    let loss_sum: Vec<f64> = loss_fold1.iter().zip(&loss_fold2).map(|(a, b)| a + b).collect();
    Ok(FoldStage {
        star: argmin_last(&loss_sum),
        penalty_fold1: fold1.iter().map(penalty).collect(),
        penalty_fold2: fold2.iter().map(penalty).collect(),
        lambda_grid,
        loss_fold1,
        loss_fold2,
        include_penalty: options.include_penalty,
        warnings,
    })
}

impl FoldStage {
    fn into_report(mut self, final_estimate: MpmEstimate) -> CvReport {
        if final_estimate.rank_deficient {
            self.warnings
                .push("least-squares refit was rank deficient; minimum-norm solution used".to_string());
        }
        CvReport {
            lambda_star: self.lambda_grid[self.star],
            loss_sum: self
                .loss_fold1
                .iter()
                .zip(&self.loss_fold2)
                .map(|(a, b)| a + b)
                .collect(),
            lambda_grid: self.lambda_grid,
            loss_fold1: self.loss_fold1,
            loss_fold2: self.loss_fold2,
            penalty_fold1: self.penalty_fold1,
            penalty_fold2: self.penalty_fold2,
            include_penalty: self.include_penalty,
            final_estimate,
            warnings: self.warnings,
        }
    }
}

/// Regression datasets for the two records around `t_r`.
pub fn window_datasets(
    record1: &SimulationRecord,
    record2: &SimulationRecord,
    t_r: f64,
    half_width: f64,
    order: usize,
) -> Result<(RegressionDataset, RegressionDataset)> {
    let d1 = build_dataset(record1, extract_window(record1, t_r, half_width, order)?, order)?;
    let d2 = build_dataset(record2, extract_window(record2, t_r, half_width, order)?, order)?;
    Ok((d1, d2))
}

/// Datasets from both records, cross-validation and the corrected model.
pub fn run_mle_pipeline(
    record1: &SimulationRecord,
    record2: &SimulationRecord,
    t_r: f64,
    half_width: f64,
    base: &ArxModel,
    grid: &[f64],
    options: &CvOptions,
) -> Result<CvReport> {
    for rec in [record1, record2] {
        if (rec.sample_period - base.sample_period()).abs() > 1e-12 {
            return Err(Error::Dimension(format!(
                "record sample period {} differs from the model's {}",
                rec.sample_period,
                base.sample_period()
            )));
        }
    }
    let (d1, d2) = window_datasets(record1, record2, t_r, half_width, base.order())?;
    cross_validate(&d1, &d2, base, grid, options)
}
