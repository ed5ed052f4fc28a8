//! Discrete-time LTI models `x_{t+1} = A x_t + B u_t`: parameters, rollouts,
//! one-step prediction, free-run simulation and eigenvalue stability.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{dim, value, Result};
use crate::linalg;

/// The learnable pair `[A B]`, stored as one `N_x x (N_x + N_u)` block.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiParams {
    theta: DMatrix<f64>,
    state_dim: usize,
}

impl LtiParams {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(dim(format!(
                "state matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.nrows() != b.nrows() {
            return Err(dim(format!(
                "state matrix has {} rows but input matrix has {}",
                a.nrows(),
                b.nrows()
            )));
        }
        if a.nrows() == 0 || b.ncols() == 0 {
            return Err(dim("state and input dimensions must be at least 1"));
        }
        let n_x = a.nrows();
        let mut theta = DMatrix::zeros(n_x, n_x + b.ncols());
        theta.view_mut((0, 0), (n_x, n_x)).copy_from(&a);
        theta.view_mut((0, n_x), (n_x, b.ncols())).copy_from(&b);
        Self::from_theta(theta, n_x)
    }

    /// Wraps a concatenated `[A B]` block whose first `state_dim` columns form `A`.
    pub fn from_theta(theta: DMatrix<f64>, state_dim: usize) -> Result<Self> {
        if state_dim == 0 || theta.nrows() != state_dim || theta.ncols() <= state_dim {
            return Err(dim(format!(
                "theta of shape {}x{} cannot hold a state dimension of {}",
                theta.nrows(),
                theta.ncols(),
                state_dim
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(value("parameters must be finite"));
        }
        Ok(Self { theta, state_dim })
    }

    pub fn from_rows(a: &[&[f64]], b: &[&[f64]]) -> Result<Self> {
        let to_matrix = |rows: &[&[f64]]| -> Result<DMatrix<f64>> {
            let ncols = rows.first().map_or(0, |r| r.len());
            if rows.iter().any(|r| r.len() != ncols) {
                return Err(dim("ragged rows"));
            }
            let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
            Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
        };
        Self::new(to_matrix(a)?, to_matrix(b)?)
    }

    pub fn zeros(state_dim: usize, input_dim: usize) -> Self {
        Self {
            theta: DMatrix::zeros(state_dim, state_dim + input_dim),
            state_dim,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.theta.ncols() - self.state_dim
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn into_theta(self) -> DMatrix<f64> {
        self.theta
    }

    pub fn a(&self) -> DMatrix<f64> {
        self.theta.columns(0, self.state_dim).into_owned()
    }

    pub fn b(&self) -> DMatrix<f64> {
        self.theta.columns(self.state_dim, self.input_dim()).into_owned()
    }

    pub fn same_shape(&self, other: &LtiParams) -> bool {
        self.theta.shape() == other.theta.shape() && self.state_dim == other.state_dim
    }

    pub fn stability(&self) -> Result<StabilityReport> {
        stability_report(&self.a())
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], ncols_if_empty: usize) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(ncols_if_empty, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(dim("ragged matrix rows"));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flatten().copied(),
    ))
}

impl Serialize for LtiParams {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsRepr {
            a: matrix_rows(&self.a()),
            b: matrix_rows(&self.b()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LtiParams {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = ParamsRepr::deserialize(d)?;
        let a = matrix_from_rows(&repr.a, 0).map_err(D::Error::custom)?;
        let b = matrix_from_rows(&repr.b, 0).map_err(D::Error::custom)?;
        LtiParams::new(a, b).map_err(D::Error::custom)
    }
}

/// One observed trajectory: `T + 1` states driven by `T` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    states: DMatrix<f64>,
    inputs: DMatrix<f64>,
}

impl Rollout {
    pub fn new(states: DMatrix<f64>, inputs: DMatrix<f64>) -> Result<Self> {
        if inputs.ncols() == 0 {
            return Err(dim("a rollout needs at least one step"));
        }
        if states.ncols() != inputs.ncols() + 1 {
            return Err(dim(format!(
                "rollout has {} states for {} inputs; expected exactly one more state",
                states.ncols(),
                inputs.ncols()
            )));
        }
        if states.nrows() == 0 || inputs.nrows() == 0 {
            return Err(dim("empty state or input dimension"));
        }
        Ok(Self { states, inputs })
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn state_dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    /// `x_{1:T+1}`, one column per time step.
    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    /// `u_{1:T}`, one column per time step.
    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn initial_state(&self) -> DVector<f64> {
        self.states.column(0).into_owned()
    }

    /// Measured successors `x_{2:T+1}`.
    pub fn successors(&self) -> DMatrix<f64> {
        self.states.columns(1, self.steps()).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub eigen_magnitudes: Vec<f64>,
    pub spectral_radius: f64,
    pub is_stable: bool,
}

/// Eigenvalue magnitudes of `a`; stable iff every `|lambda| < 1` strictly.
pub fn stability_report(a: &DMatrix<f64>) -> Result<StabilityReport> {
    let eigen_magnitudes: Vec<f64> = linalg::eigenvalues(a)?.iter().map(|l| l.norm()).collect();
    let spectral_radius = eigen_magnitudes.iter().copied().fold(0.0, f64::max);
    Ok(StabilityReport {
        is_stable: spectral_radius < 1.0,
        eigen_magnitudes,
        spectral_radius,
    })
}

fn check_dims(params: &LtiParams, state_dim: usize, input_dim: usize) -> Result<()> {
    if params.state_dim() != state_dim || params.input_dim() != input_dim {
        return Err(dim(format!(
            "model is {}x{} (states x inputs) but data is {}x{}",
            params.state_dim(),
            params.input_dim(),
            state_dim,
            input_dim
        )));
    }
    Ok(())
}

/// One-step-ahead estimates `x~_{2:T+1}` from measured states (prediction mode).
pub fn predict_rollout(params: &LtiParams, rollout: &Rollout) -> Result<DMatrix<f64>> {
    check_dims(params, rollout.state_dim(), rollout.input_dim())?;
    let t = rollout.steps();
    let prev = rollout.states.columns(0, t);
    Ok(params.a() * prev + params.b() * &rollout.inputs)
}

/// Free-run trajectory of a model fed only inputs and the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// `x~_{1:T+1}`; the first column is the supplied initial state.
    pub states: DMatrix<f64>,
    /// The model's state matrix has spectral radius `>= 1`.
    pub unstable_model: bool,
    /// Some simulated value overflowed to a non-finite number.
    pub overflowed: bool,
}

/// Simulation mode: `x~_{t+1} = A x~_t + B u_t` from the model's own estimates.
pub fn simulate_rollout(params: &LtiParams, initial_state: &DVector<f64>, inputs: &DMatrix<f64>) -> Result<Simulation> {
    check_dims(params, initial_state.len(), inputs.nrows())?;
    let a = params.a();
    let b = params.b();
    let steps = inputs.ncols();
    let mut states = DMatrix::zeros(initial_state.len(), steps + 1);
    states.set_column(0, initial_state);
    for t in 0..steps {
        let next = &a * states.column(t) + &b * inputs.column(t);
        states.set_column(t + 1, &next);
    }
    Ok(Simulation {
        overflowed: states.iter().any(|v| !v.is_finite()),
        unstable_model: !stability_report(&a)?.is_stable,
        states,
    })
}

/// Noise levels of the generating process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    pub sigma_x: f64,
    pub sigma_u: f64,
    pub sigma_w: f64,
}

impl NoiseLevels {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_x", self.sigma_x),
            ("sigma_u", self.sigma_u),
            ("sigma_w", self.sigma_w),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(value(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, sigma: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| sigma * rng.sample::<f64, _>(StandardNormal))
}

/// Draws `x_1`, `u_{1:T}` and `w_{1:T}` from zero-mean Gaussians and rolls the
/// true system forward.
pub fn generate_rollout<R: Rng + ?Sized>(
    params: &LtiParams,
    steps: usize,
    noise: NoiseLevels,
    rng: &mut R,
) -> Result<Rollout> {
    noise.validate()?;
    if steps == 0 {
        return Err(value("a rollout needs at least one step"));
    }
    let n_x = params.state_dim();
    let x1 = normal_matrix(rng, n_x, 1, noise.sigma_x);
    let inputs = normal_matrix(rng, params.input_dim(), steps, noise.sigma_u);
    let w = normal_matrix(rng, n_x, steps, noise.sigma_w);
    let a = params.a();
    let b = params.b();
    let mut states = DMatrix::zeros(n_x, steps + 1);
    states.set_column(0, &x1.column(0));
    for t in 0..steps {
        let next = &a * states.column(t) + &b * inputs.column(t) + w.column(t);
        states.set_column(t + 1, &next);
    }
    Rollout::new(states, inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};

    fn scalar(a: f64, b: f64) -> LtiParams {
        LtiParams::from_rows(&[&[a]], &[&[b]]).unwrap()
    }

    #[test]
    fn zero_matrix_is_stable() {
        let r = stability_report(&DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(r.spectral_radius, 0.0);
        assert!(r.is_stable);
        assert_eq!(r.eigen_magnitudes.len(), 3);
    }

    #[test]
    fn identity_is_not_stable() {
        let r = stability_report(&DMatrix::identity(3, 3)).unwrap();
        assert!((r.spectral_radius - 1.0).abs() < 1e-12);
        assert!(!r.is_stable);
    }

    #[test]
    fn stability_rejects_bad_input() {
        assert!(stability_report(&DMatrix::zeros(2, 3)).is_err());
        assert!(stability_report(&DMatrix::from_element(2, 2, f64::INFINITY)).is_err());
    }

    #[test]
    fn scalar_prediction_by_hand() {
        let p = scalar(0.5, 1.0);
        let r = Rollout::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
        )
        .unwrap();
        let pred = predict_rollout(&p, &r).unwrap();
        assert_eq!(pred[(0, 0)], 1.5);
    }

    #[test]
    fn zero_model_predicts_zero() {
        let mut rng = substream(1, Domain::Generic, 0, 0);
        let truth = LtiParams::from_rows(&[&[0.5, 0.1], &[0.0, 0.3]], &[&[1.0], &[0.2]]).unwrap();
        let noise = NoiseLevels {
            sigma_x: 0.1,
            sigma_u: 0.1,
            sigma_w: 0.0,
        };
        let r = generate_rollout(&truth, 20, noise, &mut rng).unwrap();
        let pred = predict_rollout(&LtiParams::zeros(2, 1), &r).unwrap();
        assert!(pred.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn doubling_system_simulates_powers_of_two() {
        let p = scalar(2.0, 0.0);
        let sim = simulate_rollout(&p, &DVector::from_element(1, 1.0), &DMatrix::zeros(1, 10)).unwrap();
        assert_eq!(sim.states[(0, 10)], 1024.0);
        assert!(sim.unstable_model);
        assert!(!sim.overflowed);
    }

    #[test]
    fn simulation_overflow_is_reported_not_raised() {
        let p = scalar(1e200, 0.0);
        let sim = simulate_rollout(&p, &DVector::from_element(1, 1e200), &DMatrix::zeros(1, 3)).unwrap();
        assert!(sim.overflowed);
    }

    #[test]
    fn zero_model_simulation_collapses() {
        let p = LtiParams::zeros(2, 1);
        let x1 = DVector::from_vec(vec![0.3, -0.2]);
        let sim = simulate_rollout(&p, &x1, &DMatrix::zeros(1, 5)).unwrap();
        assert_eq!(sim.states.column(0), x1.column(0));
        assert!(sim.states.columns(1, 5).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_noise_gives_zero_rollout() {
        let truth = LtiParams::from_rows(&[&[0.5]], &[&[1.0]]).unwrap();
        let mut rng = substream(3, Domain::Generic, 0, 0);
        let zero = NoiseLevels {
            sigma_x: 0.0,
            sigma_u: 0.0,
            sigma_w: 0.0,
        };
        let r = generate_rollout(&truth, 5, zero, &mut rng).unwrap();
        assert!(r.states().iter().chain(r.inputs().iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn generation_validates_arguments() {
        let truth = scalar(0.5, 1.0);
        let mut rng = substream(3, Domain::Generic, 0, 0);
        let bad = NoiseLevels {
            sigma_x: -0.1,
            sigma_u: 0.0,
            sigma_w: 0.0,
        };
        assert!(generate_rollout(&truth, 5, bad, &mut rng).is_err());
        let ok = NoiseLevels {
            sigma_x: 0.1,
            sigma_u: 0.0,
            sigma_w: 0.0,
        };
        assert!(generate_rollout(&truth, 0, ok, &mut rng).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = LtiParams::zeros(2, 1);
        let r = Rollout::new(DMatrix::zeros(3, 4), DMatrix::zeros(1, 3)).unwrap();
        assert!(predict_rollout(&p, &r).is_err());
        assert!(simulate_rollout(&p, &DVector::zeros(3), &DMatrix::zeros(1, 3)).is_err());
        assert!(Rollout::new(DMatrix::zeros(3, 3), DMatrix::zeros(1, 3)).is_err());
        assert!(LtiParams::new(DMatrix::zeros(2, 3), DMatrix::zeros(2, 1)).is_err());
        assert!(LtiParams::new(DMatrix::zeros(2, 2), DMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn params_serde_round_trip() {
        let p = LtiParams::from_rows(&[&[0.1, 0.2], &[0.3, 0.4]], &[&[1.0 / 3.0], &[-2.5]]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let back: LtiParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
    }
}
