//! Levenberg–Marquardt (damped least squares) training of a [`MaskedMlp`].
//!
//! Each iteration solves `(JᵀJ + λI) d = -Jᵀr` for the active parameters,
//! where `r` is the residual vector scaled by `1/√n` (so `‖r‖²` is the mean
//! squared error) and `J` its Jacobian. A proposal is
//! accepted only if it lowers the mean squared residual; `λ` shrinks after
//! an accepted step and grows after a rejected one.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{solve_spd, Matrix};
use crate::mlp::{MaskedMlp, ParamVector};
use crate::series::LagDataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmaConfig {
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub max_iters: usize,
    /// Stop once an accepted step has `‖d‖∞` below this.
    pub step_tol: f64,
    /// Stop once an accepted step lowers the loss by less than this.
    pub loss_tol: f64,
    pub lambda_max: f64,
}

impl Default for LmaConfig {
    fn default() -> Self {
        Self {
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            max_iters: 200,
            step_tol: 1e-8,
            loss_tol: 1e-12,
            lambda_max: 1e10,
        }
    }
}

impl LmaConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.lambda0,
            self.lambda_up,
            self.lambda_down,
            self.step_tol,
            self.loss_tol,
            self.lambda_max,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("LMA settings must be finite"));
        }
        if !(self.lambda0 > 0.0) {
            return Err(Error::invalid("lambda0 must be positive"));
        }
        if !(self.lambda_up > 1.0 && self.lambda_down > 1.0) {
            return Err(Error::invalid("lambda_up and lambda_down must exceed 1"));
        }
        if self.step_tol < 0.0 || self.loss_tol < 0.0 {
            return Err(Error::invalid("tolerances must be non-negative"));
        }
        if !(self.lambda_max > self.lambda0) {
            return Err(Error::invalid("lambda_max must exceed lambda0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StopReason {
    StepSmall,
    LossStall,
    MaxIters,
    LambdaOverflow,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::StepSmall => "step_small",
            StopReason::LossStall => "loss_stall",
            StopReason::MaxIters => "max_iters",
            StopReason::LambdaOverflow => "lambda_overflow",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ParamVector,
    /// Mean squared residual at `params`.
    pub final_loss: f64,
    /// Accepted steps.
    pub iters: usize,
    pub converged: bool,
    pub reason: StopReason,
    /// Loss at the start followed by the loss after each accepted step.
    pub loss_trace: Vec<f64>,
}

/// Mean squared residual `(1/n) Σ rᵢ²`.
pub fn loss(net: &MaskedMlp, ds: &LagDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::invalid("loss of an empty dataset is undefined"));
    }
    Ok(mean_square(&net.residuals(ds)?))
}

fn mean_square(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `(JᵀJ + λI) d = -Jᵀr` by Cholesky factorization.
pub fn solve_damped_normal_equations(jac: &Matrix, resid: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if resid.len() != jac.rows() {
        return Err(Error::Dimension {
            expected: jac.rows(),
            got: resid.len(),
        });
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!(
            "damping must be positive, got {lambda}"
        )));
    }
    if !jac.is_finite() || resid.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("Jacobian and residuals must be finite"));
    }
    let neg_grad: Vec<f64> = jac.t_mul_vec(resid).into_iter().map(|g| -g).collect();
    damped_step(&jac.gram(), &neg_grad, lambda)
}

fn damped_step(gram: &Matrix, neg_grad: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let mut a = gram.clone();
    for i in 0..a.rows() {
        a[(i, i)] += lambda;
    }
    solve_spd(&a, neg_grad)
}

/// Trains every active parameter of `net` on `ds`.
pub fn fit(net: &MaskedMlp, ds: &LagDataset, cfg: &LmaConfig) -> Result<FitResult> {
    fit_subset(net, ds, cfg, &net.mask().active_indices())
}

/// Trains only the packed parameters listed in `free`; every other
/// parameter keeps its stored value. `free` must name active parameters.
pub fn fit_subset(
    net: &MaskedMlp,
    ds: &LagDataset,
    cfg: &LmaConfig,
    free: &[usize],
) -> Result<FitResult> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::invalid("cannot fit an empty dataset"));
    }
    if ds.lags() != net.topology().n_inputs() {
        return Err(Error::Dimension {
            expected: net.topology().n_inputs(),
            got: ds.lags(),
        });
    }
    if free.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    if let Some(&i) = free.iter().find(|&&i| !net.mask().is_active(i)) {
        return Err(Error::invalid(format!(
            "parameter {i} is masked out and cannot be fitted"
        )));
    }

    // Residuals and Jacobian are scaled by 1/sqrt(n) so that the squared
    // norm of the residual vector is the mean squared error and the damping
    // acts on per-row curvature regardless of dataset size.
    let scale = 1.0 / (ds.len() as f64).sqrt();
    let scaled = |net: &MaskedMlp| -> Result<(Vec<f64>, Matrix)> {
        let (r, j) = net.residuals_and_jacobian_for(ds, free)?;
        let j = Matrix::from_row_major(
            j.rows(),
            j.cols(),
            j.as_slice().iter().map(|v| v * scale).collect(),
        )?;
        Ok((r.into_iter().map(|v| v * scale).collect(), j))
    };

    let mut current = net.clone();
    let (mut resid, mut jac) = scaled(&current)?;
    let mut loss = mean_square(&current.residuals(ds)?);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: 0 });
    }
    let mut trace = vec![loss];
    let mut lambda = cfg.lambda0;
    let mut iters = 0;

    let reason = 'outer: loop {
        if iters >= cfg.max_iters {
            break StopReason::MaxIters;
        }
        let neg_grad: Vec<f64> = jac.t_mul_vec(&resid).into_iter().map(|g| -g).collect();
        if loss == 0.0 || neg_grad.iter().all(|&g| g == 0.0) {
            break StopReason::StepSmall;
        }
        let gram = jac.gram();

        let (trial, trial_loss, step) = loop {
            let step = match damped_step(&gram, &neg_grad, lambda) {
                Ok(d) => d,
                Err(Error::Factorization(_)) => {
                    lambda *= cfg.lambda_up;
                    if lambda > cfg.lambda_max {
                        break 'outer StopReason::LambdaOverflow;
                    }
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut trial = current.clone();
            for (&i, d) in free.iter().zip(&step) {
                trial.set_param(i, trial.params()[i] + d)?;
            }
            let trial_loss = mean_square(&trial.residuals(ds)?);
            if trial_loss.is_finite() && trial_loss < loss {
                break (trial, trial_loss, step);
            }
            lambda *= cfg.lambda_up;
            if lambda > cfg.lambda_max {
                break 'outer StopReason::LambdaOverflow;
            }
        };

        iters += 1;
        let improvement = loss - trial_loss;
        current = trial;
        loss = trial_loss;
        trace.push(loss);
        lambda = (lambda / cfg.lambda_down).max(f64::MIN_POSITIVE);
        debug_assert!(current
            .params()
            .iter()
            .zip(current.mask().as_slice())
            .all(|(&v, &a)| a || v == 0.0));

        if inf_norm(&step) < cfg.step_tol {
            break StopReason::StepSmall;
        }
        if improvement < cfg.loss_tol {
            break StopReason::LossStall;
        }
        (resid, jac) = scaled(&current)?;
    };

    Ok(FitResult {
        params: current.params().clone(),
        final_loss: loss,
        iters,
        converged: matches!(reason, StopReason::StepSmall | StopReason::LossStall),
        reason,
        loss_trace: trace,
    })
}
