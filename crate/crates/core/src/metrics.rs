//! Evaluation quantities: parameter errors, normalized fit, cluster and fleet
//! means, misclassification and instability percentages.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dim, value, Error, Result};
use crate::linalg::Norm2;
use crate::lti::{predict_rollout, simulate_rollout, LtiParams, Rollout};

/// Frobenius distance between two parameter sets.
pub fn param_error(estimate: &LtiParams, truth: &LtiParams) -> Result<f64> {
    if !estimate.same_shape(truth) {
        return Err(dim("parameter shapes differ"));
    }
    Ok((estimate.theta() - truth.theta()).norm())
}

/// Distance from `truth` to the closest estimated cluster.
pub fn best_match_error(estimates: &[LtiParams], truth: &LtiParams) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Empty("no estimated clusters".into()));
    }
    estimates
        .iter()
        .map(|e| param_error(e, truth))
        .try_fold(f64::INFINITY, |best, e| e.map(|e| best.min(e)))
}

/// Smallest pairwise distance between distinct ground-truth systems.
pub fn delta_min(ground_truth: &[LtiParams], norm2: Norm2) -> Result<f64> {
    if ground_truth.len() < 2 {
        return Err(value("separation needs at least two systems"));
    }
    let mut best = f64::INFINITY;
    for (j, a) in ground_truth.iter().enumerate() {
        for b in &ground_truth[j + 1..] {
            if !a.same_shape(b) {
                return Err(dim("parameter shapes differ"));
            }
            best = best.min(norm2.apply(&(a.theta() - b.theta())));
        }
    }
    Ok(best)
}

/// `P_n = 1 - ||x_n - x~_n|| / ||x_n - mean(x_n)||` for every state row.
pub fn fit_per_state(measured: &DMatrix<f64>, estimated: &DMatrix<f64>) -> Result<Vec<f64>> {
    if measured.shape() != estimated.shape() {
        return Err(dim(format!(
            "measured is {:?} but estimate is {:?}",
            measured.shape(),
            estimated.shape()
        )));
    }
    if measured.ncols() < 2 {
        return Err(value("fit needs at least two samples"));
    }
    measured
        .row_iter()
        .zip(estimated.row_iter())
        .enumerate()
        .map(|(n, (x, est))| {
            let mean = x.mean();
            let spread = x.map(|v| v - mean).norm();
            if spread == 0.0 {
                return Err(Error::UndefinedFit { state: n });
            }
            Ok(1.0 - (x - est).norm() / spread)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    Prediction,
    Simulation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub per_state: Vec<f64>,
    pub min_fit: f64,
    pub mode: FitMode,
}

impl FitRecord {
    pub fn new(per_state: Vec<f64>, mode: FitMode) -> Result<Self> {
        if per_state.is_empty() {
            return Err(Error::Empty("fit vector".into()));
        }
        let min_fit = per_state.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            per_state,
            min_fit,
            mode,
        })
    }
}

/// Poorest per-state fit.
pub fn worker_min_fit(record: &FitRecord) -> f64 {
    record.min_fit
}

/// Scores a model on a set of rollouts, concatenating `x_{2:T+1}` and the
/// model's estimates across rollouts before computing the fit.
pub fn evaluate_fit(params: &LtiParams, rollouts: &[Rollout], mode: FitMode) -> Result<FitRecord> {
    if rollouts.is_empty() {
        return Err(Error::Empty("no rollouts to score".into()));
    }
    let total: usize = rollouts.iter().map(|r| r.steps()).sum();
    let n_x = params.state_dim();
    let mut measured = DMatrix::zeros(n_x, total);
    let mut estimated = DMatrix::zeros(n_x, total);
    let mut col = 0;
    for r in rollouts {
        let t = r.steps();
        let est = match mode {
            FitMode::Prediction => predict_rollout(params, r)?,
            FitMode::Simulation => {
                let sim = simulate_rollout(params, &r.initial_state(), r.inputs())?;
                sim.states.columns(1, t).into_owned()
            }
        };
        if r.state_dim() != n_x {
            return Err(dim("rollout state dimension differs from the model"));
        }
        measured
            .view_mut((0, col), (n_x, t))
            .copy_from(&r.states().columns(1, t));
        estimated.view_mut((0, col), (n_x, t)).copy_from(&est);
        col += t;
    }
    FitRecord::new(fit_per_state(&measured, &estimated)?, mode)
}

/// Per ground-truth cluster mean of each state's fit, indexed `[q][n]`.
pub fn cluster_mean_fit(fits: &[Vec<f64>], labels: &[usize], clusters: usize) -> Result<Vec<Vec<f64>>> {
    if fits.len() != labels.len() {
        return Err(dim("one label per fit record is required"));
    }
    let n_x = fits.first().map_or(0, |f| f.len());
    let mut sums = vec![vec![0.0; n_x]; clusters];
    let mut counts = vec![0usize; clusters];
    for (f, &q) in fits.iter().zip(labels) {
        if q >= clusters {
            return Err(value(format!("label {q} out of range for {clusters} clusters")));
        }
        if f.len() != n_x {
            return Err(dim("fit records differ in length"));
        }
        counts[q] += 1;
        for (s, v) in sums[q].iter_mut().zip(f) {
            *s += v;
        }
    }
    if let Some(q) = counts.iter().position(|&c| c == 0) {
        return Err(value(format!("ground-truth cluster {q} has no scored workers")));
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect())
}

/// Mean of each state's fit over all workers.
pub fn fleet_mean_fit(fits: &[Vec<f64>]) -> Result<Vec<f64>> {
    let labels = vec![0; fits.len()];
    if fits.is_empty() {
        return Err(Error::Empty("no fit records".into()));
    }
    Ok(cluster_mean_fit(fits, &labels, 1)?.remove(0))
}

/// How a worker counts as misclassified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MisclassDefinition {
    /// Shares its model cluster with any worker of another ground-truth label.
    #[default]
    Pairwise,
    /// Differs from the most common ground-truth label of its model cluster.
    Majority,
}

/// Percentage of misclassified workers.
pub fn misclassified_pct(flags: &[usize], labels: &[usize]) -> Result<f64> {
    misclassified_pct_with(flags, labels, MisclassDefinition::Pairwise)
}

pub fn misclassified_pct_with(flags: &[usize], labels: &[usize], definition: MisclassDefinition) -> Result<f64> {
    if flags.len() != labels.len() {
        return Err(dim("flags and labels differ in length"));
    }
    if flags.is_empty() {
        return Ok(0.0);
    }
    let k = flags.iter().max().unwrap() + 1;
    let q = labels.iter().max().unwrap() + 1;
    let mut table = vec![vec![0usize; q]; k];
    for (&f, &l) in flags.iter().zip(labels) {
        table[f][l] += 1;
    }
    let bad = flags
        .iter()
        .zip(labels)
        .filter(|(&f, &l)| match definition {
            MisclassDefinition::Pairwise => table[f].iter().enumerate().any(|(other, &n)| other != l && n > 0),
            MisclassDefinition::Majority => {
                // ties resolve to the lowest label
                let majority = table[f]
                    .iter()
                    .enumerate()
                    .fold((0, 0), |best, (lab, &n)| if n > best.1 { (lab, n) } else { best })
                    .0;
                majority != l
            }
        })
        .count();
    Ok(100.0 * bad as f64 / flags.len() as f64)
}

/// Percentage of cluster models, pooled over all given sets, whose state
/// matrix has spectral radius `>= 1`.
pub fn unstable_cluster_pct<'a, I>(model_sets: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a [LtiParams]>,
{
    let (mut total, mut unstable) = (0usize, 0usize);
    for set in model_sets {
        for p in set {
            total += 1;
            if !p.stability()?.is_stable {
                unstable += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Empty("no cluster models".into()));
    }
    Ok(100.0 * unstable as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::builtin_ground_truth;

    fn row(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, v.len(), v)
    }

    #[test]
    fn param_error_cases() {
        let gt = builtin_ground_truth();
        assert_eq!(param_error(&gt[0], &gt[0]).unwrap(), 0.0);
        let mut theta = gt[0].theta().clone();
        theta[(1, 4)] += 0.3;
        let shifted = LtiParams::from_theta(theta, 3).unwrap();
        assert!((param_error(&shifted, &gt[0]).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(
            param_error(&gt[1], &gt[2]).unwrap(),
            param_error(&gt[2], &gt[1]).unwrap()
        );
        assert!(param_error(&gt[0], &LtiParams::zeros(2, 2)).is_err());
    }

    #[test]
    fn best_match_cases() {
        let gt = builtin_ground_truth();
        assert_eq!(best_match_error(&gt, &gt[3]).unwrap(), 0.0);
        assert_eq!(
            best_match_error(&gt[1..2], &gt[0]).unwrap(),
            param_error(&gt[1], &gt[0]).unwrap()
        );
        assert!(best_match_error(&[], &gt[0]).is_err());
    }

    #[test]
    fn delta_min_cases() {
        let gt = builtin_ground_truth();
        assert_eq!(
            delta_min(&[gt[0].clone(), gt[0].clone()], Norm2::Spectral).unwrap(),
            0.0
        );
        assert!(delta_min(&gt[..1], Norm2::Spectral).is_err());
    }

    #[test]
    fn fit_anchors() {
        let x = row(&[1.0, 2.0, 3.0]);
        assert_eq!(fit_per_state(&x, &x).unwrap(), vec![1.0]);
        assert!(fit_per_state(&x, &row(&[2.0, 2.0, 2.0])).unwrap()[0].abs() < 1e-15);
        let p = fit_per_state(&x, &row(&[1.0, 2.0, 4.0])).unwrap()[0];
        assert!((p - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-15);
        assert!(matches!(
            fit_per_state(&row(&[1.0, 1.0]), &row(&[0.0, 0.0])),
            Err(Error::UndefinedFit { state: 0 })
        ));
        assert!(fit_per_state(&x, &row(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn min_fit() {
        let r = FitRecord::new(vec![0.9, -0.2, 0.5], FitMode::Prediction).unwrap();
        assert_eq!(worker_min_fit(&r), -0.2);
        let r = FitRecord::new(vec![0.5, 0.9, -0.2], FitMode::Prediction).unwrap();
        assert_eq!(worker_min_fit(&r), -0.2);
        assert_eq!(FitRecord::new(vec![0.9; 3], FitMode::Simulation).unwrap().min_fit, 0.9);
    }

    #[test]
    fn cluster_and_fleet_means() {
        let fits = vec![vec![0.2, 0.4], vec![0.6, 0.8], vec![0.1, 0.3]];
        let m = cluster_mean_fit(&fits, &[0, 0, 1], 2).unwrap();
        assert!((m[0][0] - 0.4).abs() < 1e-15 && (m[0][1] - 0.6).abs() < 1e-15);
        assert_eq!(m[1], vec![0.1, 0.3]);
        assert!(cluster_mean_fit(&fits, &[0, 0, 0], 2).is_err());
        let fleet = fleet_mean_fit(&fits).unwrap();
        assert_eq!(fleet, cluster_mean_fit(&fits, &[0, 0, 0], 1).unwrap()[0]);
        assert_eq!(fleet_mean_fit(&fits[..1]).unwrap(), fits[0]);
    }

    #[test]
    fn misclassification_examples() {
        assert_eq!(misclassified_pct(&[0, 0, 1], &[0, 0, 1]).unwrap(), 0.0);
        let p = misclassified_pct(&[0, 1, 1], &[0, 0, 1]).unwrap();
        assert!((p - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(misclassified_pct(&[0; 4], &[0, 0, 1, 1]).unwrap(), 100.0);
        assert_eq!(
            misclassified_pct_with(&[0, 0, 0], &[0, 0, 1], MisclassDefinition::Majority).unwrap(),
            100.0 / 3.0
        );
    }

    #[test]
    fn unstable_percentage() {
        let stable = builtin_ground_truth();
        assert_eq!(unstable_cluster_pct([stable.as_slice()]).unwrap(), 0.0);
        let mut set = vec![stable[0].clone(); 19];
        set.push(LtiParams::from_theta(DMatrix::from_fn(3, 5, |i, j| if i == j { 1.5 } else { 0.0 }), 3).unwrap());
        assert_eq!(unstable_cluster_pct([&set[..10], &set[10..]]).unwrap(), 5.0);
    }
}
