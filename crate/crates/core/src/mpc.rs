//! Unconstrained multivariable MPC built on a transfer-matrix prediction model.
//!
//! At control instant `l` the controller holds the input `u_l` of the period
//! just ended. It picks rate moves `du_1..du_Hc` defining
//! `u_{l+i} = u_{l+i-1} + du_i` (held after `Hc`), minimizing
//!
//! ```text
//! J = sum_{i=1..Hp} (r - y_{l|i})' Qy (r - y_{l|i}) + sum_{i=1..Hc} du_i' Qu du_i
//! ```
//!
//! and returns `u_{l+1}`, which the plant receives at once and holds until the
//! next instant, so `y_{l|i}` is the output after `i` periods under
//! `u_{l+1}..u_{l+i}`. Output predictions carry a constant disturbance estimate
//! that tracks the measured-minus-modelled output through a first-order filter
//! with gain `disturbance_gain`; a gain of 1 is the plain bias correction. Any
//! gain in `(0, 1]` keeps tracking offset-free.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{PlantSimulator, TransferMatrixModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    /// `Hp`, in control periods.
    pub prediction_horizon: usize,
    /// `Hc`, in control periods.
    pub control_horizon: usize,
    /// `Qy`, `p x p`.
    pub output_weight: Vec<Vec<f64>>,
    /// `Qu`, `m x m`.
    pub input_rate_weight: Vec<Vec<f64>>,
    /// Minutes between input updates.
    pub control_period: f64,
    /// Filter gain of the output-disturbance estimate, in `(0, 1]`.
    #[serde(default = "unit_gain")]
    pub disturbance_gain: f64,
}

fn unit_gain() -> f64 {
    1.0
}

impl MpcConfig {
    /// Hp = 30, Hc = 5, Qy = diag(0.2, 0.2), Qu = diag(0.1, 0.1), one-minute
    /// control period. The disturbance filter gain of 0.4 keeps the loop stable
    /// when the steam dead times grow by 4 min; the plain bias correction
    /// diverges there.
    pub fn wood_berry() -> Self {
        MpcConfig {
            prediction_horizon: 30,
            control_horizon: 5,
            output_weight: vec![vec![0.2, 0.0], vec![0.0, 0.2]],
            input_rate_weight: vec![vec![0.1, 0.0], vec![0.0, 0.1]],
            control_period: 1.0,
            disturbance_gain: 0.4,
        }
    }

    /// Check horizons, timing and weights against a plant with `p` outputs and `m` inputs.
    /// Returns the number of plant samples per control period.
    pub fn validate(&self, outputs: usize, inputs: usize, sample_period: f64) -> Result<usize> {
        if self.control_horizon == 0 {
            return Err(Error::config("mpc.control_horizon", "must be at least 1"));
        }
        if self.prediction_horizon <= self.control_horizon {
            return Err(Error::config(
                "mpc.prediction_horizon",
                format!(
                    "must exceed control_horizon ({} <= {})",
                    self.prediction_horizon, self.control_horizon
                ),
            ));
        }
        if !(self.control_period >= sample_period) {
            return Err(Error::config(
                "mpc.control_period",
                format!("must be >= the sample period {sample_period}"),
            ));
        }
        let ratio = (self.control_period / sample_period).round();
        if (ratio * sample_period - self.control_period).abs() > 1e-9 {
            return Err(Error::config(
                "mpc.control_period",
                format!("must be an integer multiple of the sample period {sample_period}"),
            ));
        }
        if !(self.disturbance_gain > 0.0 && self.disturbance_gain <= 1.0) {
            return Err(Error::config("mpc.disturbance_gain", "must lie in (0, 1]"));
        }
        check_weight(&self.output_weight, outputs, "mpc.output_weight")?;
        check_weight(&self.input_rate_weight, inputs, "mpc.input_rate_weight")?;
        Ok(ratio as usize)
    }
}

fn check_weight(w: &[Vec<f64>], n: usize, path: &str) -> Result<()> {
    if w.len() != n || w.iter().any(|r| r.len() != n) {
        return Err(Error::config(path, format!("must be {n}x{n}")));
    }
    let mat = to_matrix(w);
    if mat.iter().any(|v| !v.is_finite()) {
        return Err(Error::config(path, "non-finite entry"));
    }
    if (&mat - mat.transpose()).amax() > 1e-12 {
        return Err(Error::config(path, "must be symmetric"));
    }
    if mat.symmetric_eigenvalues().min() < -1e-12 {
        return Err(Error::config(path, "must be positive semidefinite"));
    }
    Ok(())
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

/// The unconstrained move problem `min |e - A du|^2_Q + |du|^2_R` in stacked form.
#[derive(Debug, Clone)]
pub struct MoveProblem {
    dynamic: DMatrix<f64>,
    output_weight: DMatrix<f64>,
    hessian: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
    outputs: usize,
    inputs: usize,
}

impl MoveProblem {
    /// `dynamic` is `(p Hp) x (m Hc)`; weights are the per-step `Qy` and `Qu`.
    pub fn new(dynamic: DMatrix<f64>, output_weight: &DMatrix<f64>, rate_weight: &DMatrix<f64>) -> Result<Self> {
        let (p, m) = (output_weight.nrows(), rate_weight.nrows());
        if p == 0 || m == 0 || !dynamic.nrows().is_multiple_of(p) || !dynamic.ncols().is_multiple_of(m) {
            return Err(Error::Dimension(
                "dynamic matrix does not tile into weight blocks".into(),
            ));
        }
        let hp = dynamic.nrows() / p;
        let hc = dynamic.ncols() / m;
        let q = block_diagonal(output_weight, hp);
        let mut hessian = dynamic.transpose() * &q * &dynamic;
        hessian += block_diagonal(rate_weight, hc);
        let factor = hessian
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("MPC normal-equations matrix is not positive definite".into()))?;
        Ok(MoveProblem {
            dynamic,
            output_weight: q,
            hessian,
            factor,
            outputs: p,
            inputs: m,
        })
    }

    /// Optimal stacked moves for the stacked tracking error `e = r - free response`,
    /// with the infinity norm of the normal-equations residual.
    pub fn solve(&self, error: &DVector<f64>) -> (DVector<f64>, f64) {
        let rhs = self.dynamic.transpose() * (&self.output_weight * error);
        let moves = self.factor.solve(&rhs);
        let residual = (&self.hessian * &moves - rhs).amax();
        (moves, residual)
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }
}

fn block_diagonal(block: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let n = block.nrows();
    let mut out = DMatrix::zeros(n * count, n * count);
    for b in 0..count {
        out.view_mut((b * n, b * n), (n, n)).copy_from(block);
    }
    out
}

/// Controller state for one closed-loop run.
#[derive(Debug, Clone)]
pub struct Controller {
    config: MpcConfig,
    substeps: usize,
    /// Prediction model at the plant sample period, positioned at the current instant.
    model: PlantSimulator,
    /// Input committed for the current control period.
    current_input: DVector<f64>,
    bias: DVector<f64>,
    problem: MoveProblem,
    last_residual: f64,
}

impl Controller {
    /// Build a controller around `model`, integrating predictions at `sample_period`.
    pub fn new(model: &TransferMatrixModel, config: &MpcConfig, sample_period: f64) -> Result<Self> {
        let (p, m) = (model.outputs(), model.inputs());
        let substeps = config.validate(p, m, sample_period)?;
        let sim = PlantSimulator::new(model, sample_period)?;
        let (hp, hc) = (config.prediction_horizon, config.control_horizon);

        // step response of the model sampled at control instants: steps[n] = S_{n}
        let mut steps = vec![DMatrix::zeros(p, m); hp + 1];
        for j in 0..m {
            let mut s = sim.clone();
            let mut u = vec![0.0; m];
            u[j] = 1.0;
            for step in steps.iter_mut().skip(1) {
                let mut y = Vec::new();
                for _ in 0..substeps {
                    y = s.advance(&u);
                }
                for (i, v) in y.iter().enumerate() {
                    step[(i, j)] = *v;
                }
            }
        }
        // y_{l|i} depends on du_j (j <= i) through S_{i-j+1}
        let mut dynamic = DMatrix::zeros(p * hp, m * hc);
        for i in 1..=hp {
            for j in 1..=hc.min(i) {
                dynamic
                    .view_mut(((i - 1) * p, (j - 1) * m), (p, m))
                    .copy_from(&steps[i - j + 1]);
            }
        }
        let problem = MoveProblem::new(
            dynamic,
            &to_matrix(&config.output_weight),
            &to_matrix(&config.input_rate_weight),
        )?;
        Ok(Controller {
            config: config.clone(),
            substeps,
            model: sim,
            current_input: DVector::zeros(m),
            bias: DVector::zeros(p),
            problem,
            last_residual: 0.0,
        })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    /// Plant samples per control period.
    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn current_input(&self) -> &DVector<f64> {
        &self.current_input
    }

    /// Normal-equations residual of the most recent move computation.
    pub fn optimality_residual(&self) -> f64 {
        self.last_residual
    }

    pub fn set_bias(&mut self, bias: DVector<f64>) {
        self.bias = bias;
    }

    /// Bias-corrected predictions `y_{l|1..Hp}` under the given rate moves,
    /// by direct simulation of the internal model.
    pub fn predict_horizon(&self, moves: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let (hp, hc) = (self.config.prediction_horizon, self.config.control_horizon);
        let m = self.current_input.len();
        if moves.len() != hc || moves.iter().any(|d| d.len() != m) {
            return Err(Error::Dimension(format!("expected {hc} rate moves of length {m}")));
        }
        let mut sim = self.model.clone();
        let mut u = self.current_input.clone();
        let mut out = Vec::with_capacity(hp);
        for i in 1..=hp {
            if i <= hc {
                u += &moves[i - 1];
            }
            let mut y = Vec::new();
            for _ in 0..self.substeps {
                y = sim.advance(u.as_slice());
            }
            out.push(DVector::from_vec(y) + &self.bias);
        }
        Ok(out)
    }

    /// Read the measured output and the current setpoint; return the input to apply now.
    pub fn control_step(&mut self, measured: &[f64], setpoint: &[f64]) -> Result<DVector<f64>> {
        let (p, m) = (self.bias.len(), self.current_input.len());
        if measured.len() != p || setpoint.len() != p {
            return Err(Error::Dimension(format!("controller expects {p} outputs")));
        }
        let modelled = DVector::from_vec(self.model.output());
        let raw = DVector::from_column_slice(measured) - modelled;
        self.bias = &self.bias + self.config.disturbance_gain * (raw - &self.bias);

        let hp = self.config.prediction_horizon;
        let zero_moves = vec![DVector::zeros(m); self.config.control_horizon];
        let free = self.predict_horizon(&zero_moves)?;
        let mut error = DVector::zeros(p * hp);
        for (i, y) in free.iter().enumerate() {
            for o in 0..p {
                error[i * p + o] = setpoint[o] - y[o];
            }
        }
        let (moves, residual) = self.problem.solve(&error);
        if !moves.iter().all(|v| v.is_finite()) {
            return Err(Error::Singular("non-finite MPC move".into()));
        }
        self.last_residual = residual;

        let next = &self.current_input + moves.rows(0, m);
        for _ in 0..self.substeps {
            self.model.advance(next.as_slice());
        }
        self.current_input = next.clone();
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{wood_berry_nominal, FopdtChannel};

    fn siso(gain: f64, tau: f64, dead: f64) -> TransferMatrixModel {
        TransferMatrixModel::from_rows(vec![vec![FopdtChannel::new(gain, tau, dead).unwrap()]]).unwrap()
    }

    fn siso_config(hp: usize, hc: usize, qy: f64, qu: f64) -> MpcConfig {
        MpcConfig {
            prediction_horizon: hp,
            control_horizon: hc,
            output_weight: vec![vec![qy]],
            input_rate_weight: vec![vec![qu]],
            control_period: 1.0,
            disturbance_gain: 1.0,
        }
    }

    #[test]
    fn wood_berry_configuration() {
        let cfg = MpcConfig::wood_berry();
        let ctrl = Controller::new(&wood_berry_nominal(), &cfg, 0.2).unwrap();
        assert_eq!(ctrl.substeps(), 5);
        assert_eq!(ctrl.config().prediction_horizon, 30);
        assert_eq!(ctrl.config().control_horizon, 5);
        assert_eq!(ctrl.bias().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn equal_horizons_rejected() {
        let mut cfg = MpcConfig::wood_berry();
        cfg.control_horizon = cfg.prediction_horizon;
        assert!(matches!(
            Controller::new(&wood_berry_nominal(), &cfg, 0.2),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn asymmetric_or_indefinite_weights_rejected() {
        let mut cfg = MpcConfig::wood_berry();
        cfg.output_weight = vec![vec![0.2, 0.1], vec![0.0, 0.2]];
        assert!(cfg.validate(2, 2, 0.2).is_err());
        cfg.output_weight = vec![vec![-0.2, 0.0], vec![0.0, 0.2]];
        assert!(cfg.validate(2, 2, 0.2).is_err());
    }

    #[test]
    fn zero_moves_predict_bias() {
        let mut ctrl = Controller::new(&wood_berry_nominal(), &MpcConfig::wood_berry(), 0.2).unwrap();
        let zero = vec![DVector::zeros(2); 5];
        assert!(ctrl.predict_horizon(&zero).unwrap().iter().all(|y| y.amax() == 0.0));
        ctrl.set_bias(DVector::from_vec(vec![0.3, -1.0]));
        for y in ctrl.predict_horizon(&zero).unwrap() {
            assert_eq!(y.as_slice(), &[0.3, -1.0]);
        }
    }

    #[test]
    fn first_move_acts_within_the_period() {
        let ctrl = Controller::new(&siso(1.0, 1.0, 0.0), &siso_config(4, 2, 1.0, 1.0), 1.0).unwrap();
        let moves = vec![DVector::from_element(1, 1.0), DVector::zeros(1)];
        let pred = ctrl.predict_horizon(&moves).unwrap();
        assert!((pred[0][0] - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((pred[1][0] - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn disturbance_estimate_is_filtered() {
        let mut cfg = siso_config(4, 2, 1.0, 1.0);
        cfg.disturbance_gain = 0.4;
        let mut ctrl = Controller::new(&siso(1.0, 1.0, 0.0), &cfg, 1.0).unwrap();
        ctrl.control_step(&[1.0], &[0.0]).unwrap();
        assert!((ctrl.bias()[0] - 0.4).abs() < 1e-15);
        cfg.disturbance_gain = 1.0;
        let mut plain = Controller::new(&siso(1.0, 1.0, 0.0), &cfg, 1.0).unwrap();
        plain.control_step(&[1.0], &[0.0]).unwrap();
        assert_eq!(plain.bias()[0], 1.0);
        for bad in [0.0, -0.1, 1.5, f64::NAN] {
            cfg.disturbance_gain = bad;
            assert!(cfg.validate(1, 1, 1.0).is_err());
        }
    }

    #[test]
    fn scalar_move_problem_closed_form() {
        let (qy, qu, e) = (0.2, 0.1, 1.5);
        let problem = MoveProblem::new(
            DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, qy),
            &DMatrix::from_element(1, 1, qu),
        )
        .unwrap();
        let (du, residual) = problem.solve(&DVector::from_element(1, e));
        assert!((du[0] - qy * e / (qy + qu)).abs() < 1e-15);
        assert!(residual < 1e-12);
    }

    #[test]
    fn at_setpoint_no_move() {
        let mut ctrl = Controller::new(&wood_berry_nominal(), &MpcConfig::wood_berry(), 0.2).unwrap();
        let u = ctrl.control_step(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(u.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn dynamic_matrix_matches_direct_simulation() {
        let ctrl = Controller::new(&wood_berry_nominal(), &MpcConfig::wood_berry(), 0.2).unwrap();
        let moves: Vec<DVector<f64>> = (0..5)
            .map(|i| DVector::from_vec(vec![0.1 * i as f64 - 0.2, 0.05 * (i * i) as f64]))
            .collect();
        let pred = ctrl.predict_horizon(&moves).unwrap();
        let stacked = DVector::from_iterator(10, moves.iter().flat_map(|d| d.iter().copied()));
        let via_matrix = &ctrl.problem.dynamic * stacked;
        for (i, y) in pred.iter().enumerate() {
            for o in 0..2 {
                assert!((y[o] - via_matrix[i * 2 + o]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn step_gradient_vanishes() {
        let mut ctrl = Controller::new(&wood_berry_nominal(), &MpcConfig::wood_berry(), 0.2).unwrap();
        ctrl.control_step(&[0.0, 0.0], &[1.0, -0.5]).unwrap();
        assert!(ctrl.optimality_residual() < 1e-8);
    }
}
