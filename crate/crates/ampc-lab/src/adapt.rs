//! Gradient-descent parameter adaptation, the spectral stability monitor,
//! and the convex input bound that makes the stability condition a linear
//! constraint.

use crate::error::{Error, Result};
use crate::linearize::N_STATES;
use crate::regressor::{HStack, ThetaVector};
use nalgebra::{DMatrix, DVector, Matrix3};

/// Number of input components the bound is split across.
const M_INPUTS: f64 = 12.0;

/// Outcome of the per-tick spectral stability check.
#[derive(Clone, Copy, Debug)]
pub struct StabilityReport {
    /// lambda_max(Gamma Gamma^T).
    pub lambda_max: f64,
    /// 2 / lambda.
    pub threshold: f64,
    pub satisfied: bool,
    /// threshold - lambda_max.
    pub margin: f64,
}

/// Convex per-component input bound, or proof that none exists at this
/// operating point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InputBound {
    Feasible(f64),
    Infeasible,
}

/// Result of one adaptation step.
#[derive(Clone, Debug)]
pub struct UpdateOutcome {
    /// One-step output prediction error x_tilde = x - Gamma theta_hat.
    pub x_tilde: DVector<f64>,
    /// True when a non-finite measurement forced the update to be skipped.
    pub skipped: bool,
}

/// Single-writer estimator state, advanced once per controller tick.
#[derive(Clone, Debug)]
pub struct AdaptiveState {
    pub theta_hat: ThetaVector,
    /// Regressor built from the previous tick's (x, u) and stance set.
    pub gamma_prev: Option<DMatrix<f64>>,
    /// Learning rate, > 0.
    pub lambda: f64,
    /// Pin theta_hat[0] at exactly 1 instead of letting the law update it.
    pub pin_constant: bool,
}

impl AdaptiveState {
    pub fn new(theta_hat: ThetaVector, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter("lambda must be positive"));
        }
        Ok(Self { theta_hat, gamma_prev: None, lambda, pin_constant: false })
    }

    /// Apply the gradient law using the stored previous regressor. Returns
    /// the prediction error; without a previous regressor the call is a no-op.
    pub fn update(&mut self, x_measured: &DVector<f64>) -> UpdateOutcome {
        let gamma = match &self.gamma_prev {
            Some(g) => g,
            None => {
                return UpdateOutcome { x_tilde: DVector::zeros(N_STATES), skipped: true }
            }
        };
        if x_measured.iter().any(|v| !v.is_finite()) {
            return UpdateOutcome { x_tilde: DVector::zeros(N_STATES), skipped: true };
        }
        let mut theta = self.theta_hat.to_dvector();
        let x_tilde = gradient_step(&mut theta, gamma, x_measured, self.lambda);
        if self.pin_constant {
            theta[0] = 1.0;
        }
        self.theta_hat = ThetaVector::from_dvector(&theta);
        UpdateOutcome { x_tilde, skipped: false }
    }

    /// Lyapunov function V = ||theta - theta_hat||^2 (test mode, truth known).
    pub fn lyapunov_value(&self, theta_true: &ThetaVector) -> f64 {
        self.theta_hat
            .0
            .iter()
            .zip(theta_true.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// The gradient update law on raw vectors (any dimensions):
/// theta += lambda Gamma^T (x - Gamma theta). Returns the prediction error.
pub fn gradient_step(
    theta: &mut DVector<f64>,
    gamma_prev: &DMatrix<f64>,
    x_measured: &DVector<f64>,
    lambda: f64,
) -> DVector<f64> {
    let x_tilde = x_measured - gamma_prev * &*theta;
    *theta += lambda * gamma_prev.transpose() * &x_tilde;
    x_tilde
}

/// One-step state prediction x_hat = Gamma theta_hat.
pub fn predict_state(gamma: &DMatrix<f64>, theta_hat: &ThetaVector) -> DVector<f64> {
    gamma * theta_hat.to_dvector()
}

/// Evaluate the spectral stability condition lambda_max(Gamma Gamma^T) < 2/lambda.
pub fn spectral_check(gamma: &DMatrix<f64>, lambda: f64) -> StabilityReport {
    let gram = gamma * gamma.transpose();
    let lambda_max = gram.symmetric_eigenvalues().iter().cloned().fold(0.0, f64::max);
    let threshold = 2.0 / lambda;
    let margin = threshold - lambda_max;
    StabilityReport { lambda_max, threshold, satisfied: margin > 0.0, margin }
}

/// Per-component input bound b such that |u_j| <= b together with
/// ||x||_1 <= eps_x implies the spectral condition.
///
/// `n_eff = 1` reproduces the published bound verbatim ("paper mode");
/// `n_eff = n` tightens it by the trace argument
/// lambda_max(Gamma Gamma^T) <= sum_i ||Gamma_i||_2^2 <= n max_i ||Gamma_i||_1^2,
/// which makes the implication provable ("certified mode", the default).
pub fn convex_input_bound(
    h: &HStack,
    lambda: f64,
    eps_x: f64,
    n_eff: usize,
) -> Result<InputBound> {
    if !(eps_x > 1.0) {
        return Err(Error::InvalidParameter(
            "eps_x must exceed 1 (constant slot contributes 1 to ||x||_1)",
        ));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter("lambda must be positive"));
    }
    if n_eff != 1 && n_eff != N_STATES {
        return Err(Error::InvalidParameter("n_eff must be 1 or the state dimension"));
    }
    let c = h.max_row_sum_norm();
    if c <= 0.0 {
        return Err(Error::InvalidParameter("H stack has zero norm"));
    }
    let b = ((2.0 / (lambda * n_eff as f64)).sqrt() / c - eps_x) / M_INPUTS;
    if b < 0.0 {
        Ok(InputBound::Infeasible)
    } else {
        Ok(InputBound::Feasible(b))
    }
}

/// Physical estimates from theta_hat: mass and the symmetrized inverse
/// inertia. No consistency is enforced against the kappa entries.
pub fn extract_estimates(theta_hat: &ThetaVector) -> Result<(f64, Matrix3<f64>)> {
    if theta_hat[1] <= 0.0 {
        return Err(Error::InvalidParameter("theta_hat[1] must be positive"));
    }
    Ok((1.0 / theta_hat[1], theta_hat.inv_inertia()))
}
