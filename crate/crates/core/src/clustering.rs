//! Cluster-level mechanics: initialisation, identity assignment, federated
//! averaging, ClusterCraft, ClusterMerge and enhanced ClusterCraft.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::datagen::RegressionView;
use crate::error::{dim, value, Error, Result};
use crate::linalg::{Norm1, Norm2};
use crate::lti::LtiParams;
use crate::metrics::delta_min;
use crate::training::{loss_mse, GramStats};

/// Scale applied to the Glorot bound so fresh state matrices start stable.
pub const GLOROT_SCALE: f64 = 0.1;

/// Cluster parameters plus each worker's (zero-based) cluster flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRegistry {
    pub params: Vec<LtiParams>,
    pub flags: Vec<usize>,
}

impl ClusterRegistry {
    pub fn new(params: Vec<LtiParams>, flags: Vec<usize>) -> Result<Self> {
        let reg = Self { params, flags };
        reg.validate()?;
        Ok(reg)
    }

    /// Every worker on cluster 0.
    pub fn single(params: LtiParams, workers: usize) -> Self {
        Self {
            params: vec![params],
            flags: vec![0; workers],
        }
    }

    pub fn k(&self) -> usize {
        self.params.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(value("registry has no clusters"));
        }
        if let Some(bad) = self.flags.iter().find(|&&f| f >= self.k()) {
            return Err(value(format!("flag {bad} out of range for {} clusters", self.k())));
        }
        if self.params.windows(2).any(|w| !w[0].same_shape(&w[1])) {
            return Err(dim("cluster parameters differ in shape"));
        }
        Ok(())
    }

    /// Number of workers flagged to each cluster.
    pub fn member_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k()];
        for &f in &self.flags {
            counts[f] += 1;
        }
        counts
    }

    /// Parameters each worker receives at the start of a round.
    pub fn broadcast(&self) -> Vec<&LtiParams> {
        self.flags.iter().map(|&f| &self.params[f]).collect()
    }
}

/// Thresholds for plateau detection and parameter similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CcThresholds {
    /// `eps_Delta`: maximum round-to-round change of the min-fit metric.
    pub plateau: f64,
    /// `eps_p`: fits below this count as poor.
    pub poor_fit: f64,
    /// `eps_s`: 1-norm radius grouping workers in enhanced ClusterCraft.
    pub ecc_similarity: f64,
    /// `eps_theta`: 2-norm radius for ClusterMerge.
    pub merge_similarity: f64,
    pub norm1: Norm1,
    pub norm2: Norm2,
}

impl Default for CcThresholds {
    fn default() -> Self {
        Self {
            plateau: 0.0005,
            poor_fit: 0.5,
            ecc_similarity: 0.1,
            merge_similarity: 0.5,
            norm1: Norm1::Entrywise,
            norm2: Norm2::Spectral,
        }
    }
}

impl CcThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("plateau", self.plateau),
            ("poor_fit", self.poor_fit),
            ("ecc_similarity", self.ecc_similarity),
            ("merge_similarity", self.merge_similarity),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::Config(format!("threshold {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Plateau at a poor fit: `|P_r - P_{r-1}| < eps_Delta` and `P_r < eps_p`.
    /// A missing previous value (`NaN`) never triggers.
    pub fn is_stuck(&self, previous: f64, current: f64) -> bool {
        (current - previous).abs() < self.plateau && current < self.poor_fit
    }
}

/// Uniform draw from `+-scale * sqrt(6 / (N_x + N_u))` for every entry.
pub fn glorot_init<R: Rng + ?Sized>(state_dim: usize, input_dim: usize, scale: f64, rng: &mut R) -> LtiParams {
    let bound = glorot_bound(state_dim, input_dim, scale);
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let theta = DMatrix::from_fn(state_dim, state_dim + input_dim, |_, _| dist.sample(rng));
    LtiParams::from_theta(theta, state_dim).expect("dimensions are at least 1")
}

pub fn glorot_bound(state_dim: usize, input_dim: usize, scale: f64) -> f64 {
    scale * 6f64.sqrt() / ((state_dim + input_dim) as f64).sqrt()
}

/// Glorot initialisation shrunk by [`GLOROT_SCALE`].
pub fn glorot_scaled_init<R: Rng + ?Sized>(state_dim: usize, input_dim: usize, rng: &mut R) -> LtiParams {
    glorot_init(state_dim, input_dim, GLOROT_SCALE, rng)
}

/// Perturbs each ground-truth system by less than `(1/2 - eta) * Delta_min`
/// in the configured 2-norm.
pub fn warm_init<R: Rng + ?Sized>(
    ground_truth: &[LtiParams],
    eta: f64,
    norm2: Norm2,
    rng: &mut R,
) -> Result<Vec<LtiParams>> {
    if !(eta > 0.0 && eta < 0.5) {
        return Err(value(format!("eta must lie in (0, 1/2), got {eta}")));
    }
    let bound = (0.5 - eta) * delta_min(ground_truth, norm2)?;
    ground_truth
        .iter()
        .map(|truth| {
            let (r, c) = truth.theta().shape();
            let direction = DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
            let size = norm2.apply(&direction);
            let radius = bound * rng.random::<f64>();
            let delta = if size > 0.0 {
                direction * (radius / size)
            } else {
                direction * 0.0
            };
            LtiParams::from_theta(truth.theta() + delta, truth.state_dim())
        })
        .collect()
}

/// Index of the cluster with the lowest MSE on the view; ties go to the lowest index.
pub fn assign_identity_ifca(view: &RegressionView, clusters: &[LtiParams]) -> Result<usize> {
    argmin_loss(clusters, |p| loss_mse(p, view))
}

/// [`assign_identity_ifca`] computed from precomputed second moments.
pub fn assign_identity_ifca_stats(stats: &GramStats, clusters: &[LtiParams]) -> Result<usize> {
    argmin_loss(clusters, |p| stats.loss_mse(p))
}

fn argmin_loss(clusters: &[LtiParams], loss: impl Fn(&LtiParams) -> Result<f64>) -> Result<usize> {
    if clusters.is_empty() {
        return Err(value("no clusters to choose from"));
    }
    let mut best = (0, f64::INFINITY);
    for (j, p) in clusters.iter().enumerate() {
        let l = loss(p)?;
        if l < best.1 {
            best = (j, l);
        }
    }
    Ok(best.0)
}

/// Federated averaging per cluster; clusters without members keep `previous`.
pub fn aggregate(worker_params: &[LtiParams], flags: &[usize], previous: &[LtiParams]) -> Result<Vec<LtiParams>> {
    if worker_params.len() != flags.len() {
        return Err(dim(format!(
            "{} worker parameter sets for {} flags",
            worker_params.len(),
            flags.len()
        )));
    }
    let k = previous.len();
    let mut sums: Vec<Option<DMatrix<f64>>> = vec![None; k];
    let mut counts = vec![0usize; k];
    for (p, &f) in worker_params.iter().zip(flags) {
        if f >= k {
            return Err(value(format!("flag {f} out of range for {k} clusters")));
        }
        if !p.same_shape(&previous[f]) {
            return Err(dim("worker parameters do not match cluster shape"));
        }
        counts[f] += 1;
        match &mut sums[f] {
            Some(acc) => *acc += p.theta(),
            slot => *slot = Some(p.theta().clone()),
        }
    }
    sums.into_iter()
        .zip(counts)
        .zip(previous)
        .map(|((sum, n), prev)| match sum {
            Some(s) => LtiParams::from_theta(s / n as f64, prev.state_dim()),
            None => Ok(prev.clone()),
        })
        .collect()
}

/// Result of a ClusterCraft-style step, applied by the coordinator after aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct CraftOutcome {
    pub k: usize,
    pub flags: Vec<usize>,
    /// Freshly initialised parameters for the new cluster, when one was created.
    pub new_cluster: Option<LtiParams>,
    /// Workers moved to the new cluster.
    pub moved: Vec<usize>,
}

fn finish_craft<R: Rng + ?Sized>(registry: &ClusterRegistry, moved: Vec<usize>, rng: &mut R) -> CraftOutcome {
    let k = registry.k();
    let mut flags = registry.flags.clone();
    for &i in &moved {
        flags[i] = k;
    }
    if flags == registry.flags {
        return CraftOutcome {
            k,
            flags,
            new_cluster: None,
            moved: Vec::new(),
        };
    }
    let shape = &registry.params[0];
    CraftOutcome {
        k: k + 1,
        flags,
        new_cluster: Some(glorot_scaled_init(shape.state_dim(), shape.input_dim(), rng)),
        moved,
    }
}

fn check_fit_vectors(previous: &[f64], current: &[f64], registry: &ClusterRegistry) -> Result<()> {
    if previous.len() != registry.flags.len() || current.len() != registry.flags.len() {
        return Err(dim("fit vectors must have one entry per worker"));
    }
    Ok(())
}

/// ClusterCraft: every stuck worker moves to one shared new cluster.
pub fn clustercraft_step<R: Rng + ?Sized>(
    previous: &[f64],
    current: &[f64],
    registry: &ClusterRegistry,
    thresholds: &CcThresholds,
    rng: &mut R,
) -> Result<CraftOutcome> {
    check_fit_vectors(previous, current, registry)?;
    let moved = (0..current.len())
        .filter(|&i| thresholds.is_stuck(previous[i], current[i]))
        .collect();
    Ok(finish_craft(registry, moved, rng))
}

/// Enhanced ClusterCraft: the first stuck worker and every worker within the
/// 1-norm radius of its parameters move to one new cluster.
pub fn ecc_step<R: Rng + ?Sized>(
    previous: &[f64],
    current: &[f64],
    registry: &ClusterRegistry,
    worker_params: &[LtiParams],
    thresholds: &CcThresholds,
    rng: &mut R,
) -> Result<CraftOutcome> {
    check_fit_vectors(previous, current, registry)?;
    if worker_params.len() != registry.flags.len() {
        return Err(dim("one parameter set per worker is required"));
    }
    let Some(first) = (0..current.len()).find(|&i| thresholds.is_stuck(previous[i], current[i])) else {
        return Ok(finish_craft(registry, Vec::new(), rng));
    };
    let anchor = worker_params[first].theta();
    let moved = worker_params
        .iter()
        .enumerate()
        .filter(|(_, p)| thresholds.norm1.apply(&(anchor - p.theta())) < thresholds.ecc_similarity)
        .map(|(i, _)| i)
        .collect();
    Ok(finish_craft(registry, moved, rng))
}

/// Merged cluster list plus the new index of every input cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub params: Vec<LtiParams>,
    pub mapping: Vec<usize>,
}

impl MergeOutcome {
    pub fn remap_flags(&self, flags: &[usize]) -> Vec<usize> {
        flags.iter().map(|&f| self.mapping[f]).collect()
    }
}

/// Repeats [`cluster_merge_once`] until a pass merges nothing, so every pair
/// of returned clusters is at least `eps_theta` apart and merging again is a
/// no-op.
pub fn cluster_merge(params: &[LtiParams], threshold: f64, norm2: Norm2) -> Result<MergeOutcome> {
    let mut out = cluster_merge_once(params, threshold, norm2)?;
    loop {
        let next = cluster_merge_once(&out.params, threshold, norm2)?;
        if next.params.len() == out.params.len() {
            return Ok(out);
        }
        out.mapping = out.mapping.iter().map(|&m| next.mapping[m]).collect();
        out.params = next.params;
    }
}

/// One greedy pass in index order: the first remaining cluster absorbs every
/// remaining cluster closer than `eps_theta` to it; the group is replaced by
/// its unweighted mean.
pub fn cluster_merge_once(params: &[LtiParams], threshold: f64, norm2: Norm2) -> Result<MergeOutcome> {
    if params.is_empty() {
        return Err(value("nothing to merge"));
    }
    let mut remaining: Vec<usize> = (0..params.len()).collect();
    let mut mapping = vec![0; params.len()];
    let mut merged = Vec::new();
    while let Some(&anchor) = remaining.first() {
        let (group, rest): (Vec<usize>, Vec<usize>) = remaining
            .iter()
            .partition(|&&j| j == anchor || norm2.apply(&(params[anchor].theta() - params[j].theta())) < threshold);
        let mut sum = DMatrix::zeros(params[anchor].theta().nrows(), params[anchor].theta().ncols());
        for &j in &group {
            if !params[j].same_shape(&params[anchor]) {
                return Err(dim("cluster parameters differ in shape"));
            }
            sum += params[j].theta();
            mapping[j] = merged.len();
        }
        merged.push(LtiParams::from_theta(
            sum / group.len() as f64,
            params[anchor].state_dim(),
        )?);
        remaining = rest;
    }
    Ok(MergeOutcome {
        params: merged,
        mapping,
    })
}
