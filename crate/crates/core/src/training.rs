//! Per-worker fitting: losses, analytic gradients, Adam, the full-batch
//! least-squares step, and the moving-average stopping rule.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{make_minibatches, RegressionView};
use crate::error::{dim, value, Error, Result};
use crate::lti::LtiParams;

/// Constant added to the second-moment estimate inside the square root.
pub const ADAM_EPSILON: f64 = 1e-6;

/// Width of the moving-average loss window.
pub const LOSS_WINDOW: usize = 10;

/// How Adam's moment estimates are debiased.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdamBiasCorrection {
    /// Divide by the constant `1 - beta`.
    #[default]
    Constant,
    /// Divide by `1 - beta^t` (textbook Adam).
    Powered,
}

/// Whether Adam moments survive between communication rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdamStatePolicy {
    #[default]
    Reset,
    Persist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Weight of the state-matrix Frobenius penalty.
    pub mu: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs_per_round: usize,
    /// Early-stop threshold on the moving-average CC loss.
    pub loss_threshold: f64,
    pub adam_bias_correction: AdamBiasCorrection,
    pub adam_state: AdamStatePolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 128,
            mu: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epochs_per_round: 1,
            loss_threshold: 0.003,
            adam_bias_correction: AdamBiasCorrection::Constant,
            adam_state: AdamStatePolicy::Reset,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad("mu must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs_per_round == 0 {
            return bad("epochs_per_round must be at least 1");
        }
        if self.loss_threshold.is_nan() || self.loss_threshold <= 0.0 {
            return bad("loss_threshold must be positive");
        }
        Ok(())
    }
}

/// First and second moment accumulators, shaped like `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros_like(params: &LtiParams) -> Self {
        let (r, c) = params.theta().shape();
        Self {
            m: DMatrix::zeros(r, c),
            v: DMatrix::zeros(r, c),
            step: 0,
        }
    }
}

fn check_view(params: &LtiParams, view: &RegressionView) -> Result<()> {
    if view.is_empty() {
        return Err(Error::Empty("regression view has no samples".into()));
    }
    let theta = params.theta();
    if view.regressors.nrows() != theta.ncols() || view.targets.nrows() != theta.nrows() {
        return Err(dim(format!(
            "theta is {}x{} but view has {} regressor rows and {} target rows",
            theta.nrows(),
            theta.ncols(),
            view.regressors.nrows(),
            view.targets.nrows()
        )));
    }
    if view.regressors.ncols() != view.targets.ncols() {
        return Err(dim("regressor and target column counts differ"));
    }
    Ok(())
}

fn residual(params: &LtiParams, view: &RegressionView) -> DMatrix<f64> {
    params.theta() * &view.regressors - &view.targets
}

/// Mean squared one-step error over the view's columns.
pub fn loss_mse(params: &LtiParams, view: &RegressionView) -> Result<f64> {
    check_view(params, view)?;
    Ok(residual(params, view).norm_squared() / view.samples() as f64)
}

/// MSE plus `mu * ||A||_F` (the input matrix is not penalised).
pub fn loss_regularized(params: &LtiParams, view: &RegressionView, mu: f64) -> Result<f64> {
    if mu < 0.0 {
        return Err(value("mu must be non-negative"));
    }
    Ok(loss_mse(params, view)? + mu * params.a().norm())
}

/// Gradient of [`loss_regularized`] with respect to `[A B]`.
///
/// At `A = 0` the penalty's subgradient is taken as zero.
pub fn loss_gradient(params: &LtiParams, view: &RegressionView, mu: f64) -> Result<DMatrix<f64>> {
    check_view(params, view)?;
    if mu < 0.0 {
        return Err(value("mu must be non-negative"));
    }
    let mut grad = residual(params, view) * view.regressors.transpose();
    grad *= 2.0 / view.samples() as f64;
    add_penalty_gradient(params, &mut grad, mu);
    Ok(grad)
}

/// One Adam step. Returns the updated parameters and accumulators.
pub fn adam_update(
    params: &LtiParams,
    grad: &DMatrix<f64>,
    state: &AdamState,
    config: &TrainConfig,
) -> Result<(LtiParams, AdamState)> {
    let shape = params.theta().shape();
    if grad.shape() != shape || state.m.shape() != shape || state.v.shape() != shape {
        return Err(dim("gradient or optimizer state does not match the parameter shape"));
    }
    let (b1, b2) = (config.beta1, config.beta2);
    let m = &state.m * b1 + grad * (1.0 - b1);
    let v = &state.v * b2 + grad.component_mul(grad) * (1.0 - b2);
    let step = state.step + 1;
    let (c1, c2) = match config.adam_bias_correction {
        AdamBiasCorrection::Constant => (1.0 - b1, 1.0 - b2),
        AdamBiasCorrection::Powered => {
            let t = step.min(i32::MAX as u64) as i32;
            (1.0 - b1.powi(t), 1.0 - b2.powi(t))
        }
    };
    let alpha = config.learning_rate;
    let theta = params.theta().zip_zip_map(&m, &v, |th, mi, vi| {
        let m_hat = mi / c1;
        let v_hat = vi / c2;
        th - alpha * m_hat / (v_hat + ADAM_EPSILON).sqrt()
    });
    Ok((
        LtiParams::from_theta(theta, params.state_dim())?,
        AdamState { m, v, step },
    ))
}

/// Full-batch step `theta + alpha (X - theta Phi) Phi^T`.
pub fn least_squares_update(params: &LtiParams, view: &RegressionView, alpha: f64) -> Result<LtiParams> {
    check_view(params, view)?;
    let step = (&view.targets - params.theta() * &view.regressors) * view.regressors.transpose();
    LtiParams::from_theta(params.theta() + step * alpha, params.state_dim())
}

/// Gradient of the regularized loss over a subset of the view's columns,
/// accumulated column by column without materialising the batch.
pub fn batch_gradient(params: &LtiParams, view: &RegressionView, columns: &[usize], mu: f64) -> Result<DMatrix<f64>> {
    check_view(params, view)?;
    if columns.is_empty() {
        return Err(Error::Empty("empty mini-batch".into()));
    }
    let theta = params.theta();
    let (rows, cols) = theta.shape();
    let mut grad = DMatrix::<f64>::zeros(rows, cols);
    let mut resid = vec![0.0; rows];
    for &c in columns {
        let phi = view.regressors.column(c);
        let target = view.targets.column(c);
        for (r, slot) in resid.iter_mut().enumerate() {
            let mut acc = -target[r];
            for k in 0..cols {
                acc += theta[(r, k)] * phi[k];
            }
            *slot = acc;
        }
        for k in 0..cols {
            let p = phi[k];
            for (r, res) in resid.iter().enumerate() {
                grad[(r, k)] += res * p;
            }
        }
    }
    grad *= 2.0 / columns.len() as f64;
    add_penalty_gradient(params, &mut grad, mu);
    Ok(grad)
}

fn add_penalty_gradient(params: &LtiParams, grad: &mut DMatrix<f64>, mu: f64) {
    if mu > 0.0 {
        let n_x = params.state_dim();
        let a = params.theta().columns(0, n_x);
        let norm = a.norm();
        if norm > 0.0 {
            let mut block = grad.columns_mut(0, n_x);
            block += a * (mu / norm);
        }
    }
}

/// Second-moment summary of a regression view: `Phi Phi^T`, `X Phi^T` and
/// `tr(X X^T)`. Losses and full-batch steps only depend on these.
#[derive(Debug, Clone, PartialEq)]
pub struct GramStats {
    pub gram: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    pub target_energy: f64,
    pub samples: usize,
}

impl GramStats {
    pub fn from_view(view: &RegressionView) -> Result<Self> {
        if view.is_empty() {
            return Err(Error::Empty("regression view has no samples".into()));
        }
        Ok(Self {
            gram: &view.regressors * view.regressors.transpose(),
            cross: &view.targets * view.regressors.transpose(),
            target_energy: view.targets.norm_squared(),
            samples: view.samples(),
        })
    }

    fn check(&self, params: &LtiParams) -> Result<()> {
        if self.cross.shape() != params.theta().shape() {
            return Err(dim("statistics do not match the parameter shape"));
        }
        Ok(())
    }

    /// Same value as [`loss_mse`] on the originating view.
    pub fn loss_mse(&self, params: &LtiParams) -> Result<f64> {
        self.check(params)?;
        let theta = params.theta();
        let quad = (theta * &self.gram).component_mul(theta).sum();
        let lin = self.cross.component_mul(theta).sum();
        Ok(((self.target_energy - 2.0 * lin + quad) / self.samples as f64).max(0.0))
    }

    /// Same step as [`least_squares_update`] on the originating view.
    pub fn least_squares_update(&self, params: &LtiParams, alpha: f64) -> Result<LtiParams> {
        self.check(params)?;
        let step = &self.cross - params.theta() * &self.gram;
        LtiParams::from_theta(params.theta() + step * alpha, params.state_dim())
    }
}

/// Runs `epochs_per_round` epochs of mini-batched Adam on the training view.
pub fn local_update<R: Rng + ?Sized>(
    train: &RegressionView,
    params: &LtiParams,
    config: &TrainConfig,
    state: &mut AdamState,
    rng: &mut R,
) -> Result<LtiParams> {
    check_view(params, train)?;
    let mut current = params.clone();
    for _ in 0..config.epochs_per_round {
        for batch in make_minibatches(train, config.batch_size, rng) {
            let grad = batch_gradient(&current, train, &batch, config.mu)?;
            let (next, next_state) = adam_update(&current, &grad, state, config)?;
            current = next;
            *state = next_state;
        }
    }
    Ok(current)
}

/// The last [`LOSS_WINDOW`] per-round losses of one worker.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    values: VecDeque<f64>,
}

impl LossHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, loss: f64) {
        if self.values.len() == LOSS_WINDOW {
            self.values.pop_front();
        }
        self.values.push_back(loss);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.values.len() == LOSS_WINDOW
    }

    /// Mean of the stored values, `None` when empty.
    pub fn moving_average(&self) -> Option<f64> {
        if self.values.is_empty() {
            None
        } else {
            Some(self.values.iter().sum::<f64>() / self.values.len() as f64)
        }
    }
}

/// True iff every worker's moving-average loss is below `threshold`.
pub fn early_stop_check(histories: &[LossHistory], threshold: f64) -> bool {
    !histories.is_empty()
        && histories
            .iter()
            .all(|h| h.moving_average().is_some_and(|avg| avg < threshold))
}
