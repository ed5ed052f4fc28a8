//! Synthetic multi-worker benchmark: ground-truth clusters, per-worker
//! rollouts, train/CC partitioning, regression views and mini-batches.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim, value, Error, Result};
use crate::lti::{generate_rollout, LtiParams, NoiseLevels, Rollout};
use crate::rng::{substream, Domain};

pub const DEFAULT_CC_FRACTION: f64 = 0.2;

/// The five reference systems (3 states, 2 inputs).
pub fn builtin_ground_truth() -> Vec<LtiParams> {
    let sys = |a: [[f64; 3]; 3], b: [[f64; 2]; 3]| {
        let a: Vec<&[f64]> = a.iter().map(|r| r.as_slice()).collect();
        let b: Vec<&[f64]> = b.iter().map(|r| r.as_slice()).collect();
        LtiParams::from_rows(&a, &b).expect("builtin systems are well formed")
    };
    vec![
        sys(
            [[0.5, 0.3, 0.1], [0.0, 0.2, 0.0], [0.1, 0.0, 0.3]],
            [[1.0, 0.5], [0.1, 1.0], [0.75, 1.5]],
        ),
        sys(
            [[-0.3, 0.0, 0.0], [0.1, 0.4, 0.0], [0.2, 0.3, 0.5]],
            [[1.5, 0.1], [0.5, 2.5], [0.1, 1.5]],
        ),
        sys(
            [[-0.1, 0.1, 0.1], [0.1, 0.15, 0.1], [0.1, 0.0, 0.2]],
            [[0.8, 0.1], [0.1, 1.5], [0.4, 0.8]],
        ),
        sys(
            [[0.7, 0.25, 0.0], [0.1, 0.7, 0.1], [0.0, 0.25, 0.7]],
            [[1.0, 0.5], [0.5, 2.5], [0.1, 0.8]],
        ),
        sys(
            [[0.5, 0.1, 0.0], [0.1, -0.2, -0.1], [0.0, -0.1, -0.3]],
            [[1.0, 0.4], [0.25, 1.5], [0.75, 0.1]],
        ),
    ]
}

fn default_cc_fraction() -> f64 {
    DEFAULT_CC_FRACTION
}

/// Shape and noise of a synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Workers per ground-truth cluster, in label order.
    pub cluster_sizes: Vec<usize>,
    /// Rollouts per worker (`N`).
    pub rollouts_per_worker: usize,
    /// Steps per rollout (`T`).
    pub steps: usize,
    pub sigma_x: f64,
    pub sigma_u: f64,
    pub sigma_w: f64,
    pub master_seed: u64,
    #[serde(default = "default_cc_fraction")]
    pub cc_fraction: f64,
    /// Generating systems; the builtin five when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<LtiParams>>,
}

impl DatasetSpec {
    /// 100 workers split (10, 24, 16, 28, 22), 100 rollouts of 50 steps each.
    pub fn benchmark_default() -> Self {
        Self {
            cluster_sizes: vec![10, 24, 16, 28, 22],
            rollouts_per_worker: 100,
            steps: 50,
            sigma_x: 0.05,
            sigma_u: 0.05,
            sigma_w: 0.02,
            master_seed: 0,
            cc_fraction: DEFAULT_CC_FRACTION,
            ground_truth: None,
        }
    }

    pub fn noise(&self) -> NoiseLevels {
        NoiseLevels {
            sigma_x: self.sigma_x,
            sigma_u: self.sigma_u,
            sigma_w: self.sigma_w,
        }
    }

    pub fn worker_count(&self) -> usize {
        self.cluster_sizes.iter().sum()
    }

    pub fn ground_truth_params(&self) -> Vec<LtiParams> {
        self.ground_truth.clone().unwrap_or_else(builtin_ground_truth)
    }

    pub fn validate(&self, clusters: &[LtiParams]) -> Result<()> {
        if self.cluster_sizes.is_empty() {
            return Err(value("at least one ground-truth cluster is required"));
        }
        if self.cluster_sizes.contains(&0) {
            return Err(value("every ground-truth cluster needs at least one worker"));
        }
        if self.rollouts_per_worker < 2 {
            return Err(value("each worker needs at least 2 rollouts to form train and CC sets"));
        }
        if self.steps == 0 {
            return Err(value("rollouts need at least one step"));
        }
        if !(self.cc_fraction > 0.0 && self.cc_fraction < 1.0) {
            return Err(value(format!(
                "cc_fraction must lie in (0, 1), got {}",
                self.cc_fraction
            )));
        }
        self.noise().validate()?;
        if clusters.len() != self.cluster_sizes.len() {
            return Err(value(format!(
                "{} cluster sizes given for {} ground-truth systems",
                self.cluster_sizes.len(),
                clusters.len()
            )));
        }
        if clusters.windows(2).any(|w| !w[0].same_shape(&w[1])) {
            return Err(dim("ground-truth systems must share dimensions"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthCluster {
    /// Zero-based label `q`.
    pub label: usize,
    pub params: LtiParams,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerDataset {
    pub worker_id: usize,
    /// Zero-based ground-truth label.
    pub label: usize,
    pub train: Vec<Rollout>,
    pub cc: Vec<Rollout>,
}

impl WorkerDataset {
    pub fn all_rollouts(&self) -> impl Iterator<Item = &Rollout> {
        self.train.iter().chain(self.cc.iter())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub clusters: Vec<GroundTruthCluster>,
    pub workers: Vec<WorkerDataset>,
}

impl Dataset {
    pub fn labels(&self) -> Vec<usize> {
        self.workers.iter().map(|w| w.label).collect()
    }

    pub fn ground_truth(&self) -> Vec<LtiParams> {
        self.clusters.iter().map(|c| c.params.clone()).collect()
    }

    pub fn state_dim(&self) -> usize {
        self.clusters[0].params.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.clusters[0].params.input_dim()
    }
}

/// Contiguous assignment: the first `sizes[0]` workers belong to cluster 0, and so on.
pub fn assign_workers(sizes: &[usize]) -> Vec<usize> {
    sizes
        .iter()
        .enumerate()
        .flat_map(|(q, &n)| std::iter::repeat_n(q, n))
        .collect()
}

/// Generates every worker's rollouts from its cluster's system and splits them.
pub fn build_synthetic_dataset(spec: &DatasetSpec, clusters: &[LtiParams]) -> Result<Dataset> {
    spec.validate(clusters)?;
    let labels = assign_workers(&spec.cluster_sizes);
    let noise = spec.noise();
    let seed = spec.master_seed;
    let workers = labels
        .par_iter()
        .enumerate()
        .map(|(worker_id, &label)| {
            let rollouts = (0..spec.rollouts_per_worker)
                .map(|k| {
                    let mut rng = substream(seed, Domain::Rollout, worker_id as u64, k as u64);
                    generate_rollout(&clusters[label], spec.steps, noise, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut rng = substream(seed, Domain::Split, worker_id as u64, 0);
            let (train, cc) = split_worker_data(rollouts, spec.cc_fraction, &mut rng)?;
            Ok(WorkerDataset {
                worker_id,
                label,
                train,
                cc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let clusters = clusters
        .iter()
        .enumerate()
        .map(|(q, p)| GroundTruthCluster {
            label: q,
            params: p.clone(),
            members: labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == q)
                .map(|(i, _)| i)
                .collect(),
        })
        .collect();
    Ok(Dataset {
        spec: spec.clone(),
        clusters,
        workers,
    })
}

/// CC-set size for `n` rollouts: `round(fraction * n)`, clamped to `[1, n - 1]`.
pub fn cc_count(n: usize, cc_fraction: f64) -> usize {
    ((cc_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Shuffled split at rollout granularity into `(train, cc)`.
pub fn split_worker_data<R: Rng + ?Sized>(
    rollouts: Vec<Rollout>,
    cc_fraction: f64,
    rng: &mut R,
) -> Result<(Vec<Rollout>, Vec<Rollout>)> {
    if !(cc_fraction > 0.0 && cc_fraction < 1.0) {
        return Err(value(format!("cc_fraction must lie in (0, 1), got {cc_fraction}")));
    }
    let n = rollouts.len();
    if n < 2 {
        return Err(value(format!("need at least 2 rollouts to split, got {n}")));
    }
    let n_cc = cc_count(n, cc_fraction);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut is_cc = vec![false; n];
    for &i in &order[..n_cc] {
        is_cc[i] = true;
    }
    let (mut train, mut cc) = (Vec::with_capacity(n - n_cc), Vec::with_capacity(n_cc));
    for (i, r) in rollouts.into_iter().enumerate() {
        if is_cc[i] {
            cc.push(r);
        } else {
            train.push(r);
        }
    }
    Ok((train, cc))
}

/// Stacked regressors `[x_t; u_t]` and their successor targets `x_{t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionView {
    pub regressors: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

impl RegressionView {
    pub fn samples(&self) -> usize {
        self.targets.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples() == 0
    }

    pub fn select(&self, columns: &[usize]) -> RegressionView {
        RegressionView {
            regressors: self.regressors.select_columns(columns),
            targets: self.targets.select_columns(columns),
        }
    }
}

pub fn make_regression_view<'a, I>(rollouts: I) -> Result<RegressionView>
where
    I: IntoIterator<Item = &'a Rollout>,
{
    let rollouts: Vec<&Rollout> = rollouts.into_iter().collect();
    let first = rollouts
        .first()
        .ok_or_else(|| Error::Empty("no rollouts for regression view".into()))?;
    let (n_x, n_u) = (first.state_dim(), first.input_dim());
    if rollouts.iter().any(|r| r.state_dim() != n_x || r.input_dim() != n_u) {
        return Err(dim("rollouts have inconsistent dimensions"));
    }
    let total: usize = rollouts.iter().map(|r| r.steps()).sum();
    let mut regressors = DMatrix::zeros(n_x + n_u, total);
    let mut targets = DMatrix::zeros(n_x, total);
    let mut col = 0;
    for r in rollouts {
        let t = r.steps();
        regressors
            .view_mut((0, col), (n_x, t))
            .copy_from(&r.states().columns(0, t));
        regressors.view_mut((n_x, col), (n_u, t)).copy_from(r.inputs());
        targets
            .view_mut((0, col), (n_x, t))
            .copy_from(&r.states().columns(1, t));
        col += t;
    }
    Ok(RegressionView { regressors, targets })
}

/// A fresh random partition of the view's columns into batches of `batch_size`;
/// the last batch may be partial.
pub fn make_minibatches<R: Rng + ?Sized>(view: &RegressionView, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..view.samples()).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}
