//! Training loops for the incremental method and the fixed-K baseline,
//! repetition over seeds, and run outputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{
    aggregate, assign_identity_ifca_stats, cluster_merge, clustercraft_step, ecc_step, glorot_init, glorot_scaled_init,
    warm_init, ClusterRegistry, CraftOutcome,
};
use crate::config::{Clustering, DatasetSource, InitScheme, Method, RunConfig};
use crate::datagen::{build_synthetic_dataset, make_regression_view, Dataset, RegressionView};
use crate::error::{Error, Result};
use crate::io::{format_f64, import_dataset, sha256_hex};
use crate::lti::LtiParams;
use crate::metrics::{
    best_match_error, cluster_mean_fit, evaluate_fit, fleet_mean_fit, misclassified_pct, unstable_cluster_pct, FitMode,
};
use crate::rng::{substream, Domain};
use crate::training::{local_update, loss_regularized, AdamState, AdamStatePolicy, GramStats, LossHistory};

/// Coordinator-side record of one communication round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    /// Cluster count after this round's bookkeeping.
    pub k: usize,
    /// Flags after this round (used for the next broadcast).
    pub flags: Vec<usize>,
    /// Per-worker loss on its CC set.
    pub loss: Vec<f64>,
    /// Per-worker poorest per-state fit on its CC set.
    pub min_fit: Vec<f64>,
    /// Workers moved to a newly created cluster.
    pub moved: Vec<usize>,
    pub spectral_radius: Vec<f64>,
    pub clusters: Vec<LtiParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    /// Mean fit per ground-truth cluster and state, `[q][n]`.
    pub per_cluster: Vec<Vec<f64>>,
    /// Mean fit per state over all workers.
    pub fleet: Vec<f64>,
}

/// Metrics of one finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub seed: u64,
    pub rounds: usize,
    pub stopped_early: bool,
    pub k_before_merge: usize,
    pub k_final: usize,
    /// Final clusters with at least one worker.
    pub nonempty_clusters: usize,
    pub mw_pct: f64,
    pub uc_pct: f64,
    /// Best-match Frobenius error for every ground-truth system.
    pub param_errors: Vec<f64>,
    pub fit_prediction: FitSummary,
    pub fit_simulation: FitSummary,
}

impl ExperimentSummary {
    /// Flat `name -> value` view used for CSV export, statistics and checks.
    pub fn flat_metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("rounds".into(), self.rounds as f64);
        m.insert("k_before_merge".into(), self.k_before_merge as f64);
        m.insert("k_final".into(), self.k_final as f64);
        m.insert(
            "merge_reduction_pct".into(),
            100.0 * (1.0 - self.k_final as f64 / self.k_before_merge.max(1) as f64),
        );
        m.insert("nonempty_clusters".into(), self.nonempty_clusters as f64);
        m.insert("mw_pct".into(), self.mw_pct);
        m.insert("uc_pct".into(), self.uc_pct);
        for (q, e) in self.param_errors.iter().enumerate() {
            m.insert(format!("e_q{}", q + 1), *e);
        }
        for (tag, fit) in [("pred", &self.fit_prediction), ("sim", &self.fit_simulation)] {
            for (q, row) in fit.per_cluster.iter().enumerate() {
                for (n, v) in row.iter().enumerate() {
                    m.insert(format!("fit_{tag}_q{}_x{}", q + 1, n + 1), *v);
                }
            }
            for (n, v) in fit.fleet.iter().enumerate() {
                m.insert(format!("fleet_{tag}_x{}", n + 1), *v);
            }
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub registry: ClusterRegistry,
    /// Registry before ClusterMerge, when it was applied.
    pub pre_merge: Option<ClusterRegistry>,
    pub logs: Vec<RoundLog>,
    /// Wall time per round in milliseconds, kept apart from the logs so that
    /// logs stay reproducible.
    pub round_millis: Vec<f64>,
    pub summary: ExperimentSummary,
}

/// A run that aborted; the rounds completed so far are kept.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub logs: Vec<RoundLog>,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run failed after {} rounds: {}", self.logs.len(), self.error)
    }
}

impl std::error::Error for RunFailure {}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        RunFailure {
            error,
            logs: Vec::new(),
        }
    }
}

/// Per-worker data prepared once and shared by every repetition.
pub struct PreparedData {
    pub dataset: Dataset,
    pub dataset_hash: String,
    train_views: Vec<RegressionView>,
    cc_views: Vec<RegressionView>,
    full_stats: Vec<GramStats>,
}

impl PreparedData {
    pub fn new(dataset: Dataset, dataset_hash: String) -> Result<Self> {
        if dataset.workers.is_empty() {
            return Err(Error::Empty("dataset has no workers".into()));
        }
        let prepared: Vec<_> = dataset
            .workers
            .par_iter()
            .map(|w| -> Result<_> {
                let train = make_regression_view(&w.train)?;
                let cc = make_regression_view(&w.cc)?;
                let full = GramStats::from_view(&make_regression_view(w.all_rollouts())?)?;
                Ok((train, cc, full))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut train_views = Vec::with_capacity(prepared.len());
        let mut cc_views = Vec::with_capacity(prepared.len());
        let mut full_stats = Vec::with_capacity(prepared.len());
        for (t, c, f) in prepared {
            train_views.push(t);
            cc_views.push(c);
            full_stats.push(f);
        }
        Ok(Self {
            dataset,
            dataset_hash,
            train_views,
            cc_views,
            full_stats,
        })
    }

    /// Generates or loads the configured dataset.
    pub fn from_source(source: &DatasetSource) -> Result<Self> {
        match source {
            DatasetSource::Spec(spec) => {
                let dataset = build_synthetic_dataset(spec, &spec.ground_truth_params())?;
                let hash = sha256_hex(serde_json::to_string(spec)?.as_bytes());
                Self::new(dataset, hash)
            }
            DatasetSource::Path(dir) => {
                let (dataset, hash) = import_dataset(dir)?;
                Self::new(dataset, hash)
            }
        }
    }

    pub fn workers(&self) -> usize {
        self.dataset.workers.len()
    }
}

fn initial_registry(config: &RunConfig, data: &PreparedData, seed: u64) -> Result<ClusterRegistry> {
    let (n_x, n_u) = (data.dataset.state_dim(), data.dataset.input_dim());
    let k = config.initial_clusters();
    let params = match config.init {
        InitScheme::Warm => {
            let gt = data.dataset.ground_truth();
            if gt.len() != k {
                return Err(Error::Config(format!(
                    "warm initialisation needs k_init equal to the {} known systems, got {k}",
                    gt.len()
                )));
            }
            warm_init(
                &gt,
                config.warm_eta,
                config.thresholds.norm2,
                &mut substream(seed, Domain::WarmInit, 0, 0),
            )?
        }
        scheme => (0..k)
            .map(|j| {
                let mut rng = substream(seed, Domain::ClusterInit, u64::MAX, j as u64);
                match scheme {
                    InitScheme::Glorot => glorot_init(n_x, n_u, 1.0, &mut rng),
                    _ => glorot_scaled_init(n_x, n_u, &mut rng),
                }
            })
            .collect(),
    };
    ClusterRegistry::new(params, vec![0; data.workers()])
}

fn spectral_radii(params: &[LtiParams]) -> Result<Vec<f64>> {
    params.iter().map(|p| Ok(p.stability()?.spectral_radius)).collect()
}

struct WorkerRound {
    params: LtiParams,
    adam: AdamState,
    loss: f64,
    min_fit: f64,
}

/// Dispatches on `config.method`.
pub fn run(config: &RunConfig, data: &PreparedData, seed: u64) -> std::result::Result<RunOutcome, RunFailure> {
    config.validate()?;
    match config.method {
        Method::IcSysid => run_ic_sysid(config, data, seed),
        Method::CSysid => run_c_sysid(config, data, seed),
    }
}

/// Incremental clustering: broadcast, local Adam epochs, CC/eCC on the
/// coordinator, federated averaging, moving-average early stop, optional merge.
pub fn run_ic_sysid(config: &RunConfig, data: &PreparedData, seed: u64) -> std::result::Result<RunOutcome, RunFailure> {
    config.validate()?;
    let m = data.workers();
    let mut registry = initial_registry(config, data, seed)?;
    let mut adam: Vec<AdamState> = registry.broadcast().into_iter().map(AdamState::zeros_like).collect();
    let mut histories = vec![LossHistory::new(); m];
    let mut previous_fit = vec![f64::NAN; m];
    let mut logs = Vec::new();
    let mut round_millis = Vec::new();
    let mut stopped_early = false;

    for round in 0..config.max_rounds {
        let started = Instant::now();
        let broadcast = registry.broadcast();
        let results = (0..m)
            .into_par_iter()
            .map(|i| -> Result<WorkerRound> {
                let mut state = match config.train.adam_state {
                    AdamStatePolicy::Reset => AdamState::zeros_like(broadcast[i]),
                    AdamStatePolicy::Persist => adam[i].clone(),
                };
                let mut rng = substream(seed, Domain::Minibatch, i as u64, round as u64);
                let params = local_update(&data.train_views[i], broadcast[i], &config.train, &mut state, &mut rng)?;
                let loss = loss_regularized(&params, &data.cc_views[i], config.train.mu)?;
                let fit = evaluate_fit(&params, &data.dataset.workers[i].cc, FitMode::Prediction)?;
                Ok(WorkerRound {
                    params,
                    adam: state,
                    loss,
                    min_fit: fit.min_fit,
                })
            })
            .collect::<Result<Vec<_>>>();
        let results = match results {
            Ok(r) => r,
            Err(error) => return Err(RunFailure { error, logs }),
        };

        let mut worker_params = Vec::with_capacity(m);
        let mut current_fit = Vec::with_capacity(m);
        let mut losses = Vec::with_capacity(m);
        for (i, r) in results.into_iter().enumerate() {
            histories[i].push(r.loss);
            losses.push(r.loss);
            current_fit.push(r.min_fit);
            adam[i] = r.adam;
            worker_params.push(r.params);
        }

        let step = || -> Result<(ClusterRegistry, Vec<usize>)> {
            let mut rng = substream(seed, Domain::ClusterInit, round as u64, 0);
            let outcome = match config.clustering {
                Clustering::Cc => {
                    clustercraft_step(&previous_fit, &current_fit, &registry, &config.thresholds, &mut rng)?
                }
                Clustering::Ecc => ecc_step(
                    &previous_fit,
                    &current_fit,
                    &registry,
                    &worker_params,
                    &config.thresholds,
                    &mut rng,
                )?,
                Clustering::None => CraftOutcome {
                    k: registry.k(),
                    flags: registry.flags.clone(),
                    new_cluster: None,
                    moved: Vec::new(),
                },
            };
            // the aggregate uses the memberships fixed at broadcast time
            let mut params = aggregate(&worker_params, &registry.flags, &registry.params)?;
            params.extend(outcome.new_cluster);
            Ok((ClusterRegistry::new(params, outcome.flags)?, outcome.moved))
        };
        let (next, moved) = match step() {
            Ok(v) => v,
            Err(error) => return Err(RunFailure { error, logs }),
        };
        registry = next;
        let radii = match spectral_radii(&registry.params) {
            Ok(r) => r,
            Err(error) => return Err(RunFailure { error, logs }),
        };
        logs.push(RoundLog {
            round,
            k: registry.k(),
            flags: registry.flags.clone(),
            loss: losses,
            min_fit: current_fit.clone(),
            moved,
            spectral_radius: radii,
            clusters: registry.params.clone(),
        });
        round_millis.push(started.elapsed().as_secs_f64() * 1e3);
        previous_fit = current_fit;

        let window_full = histories.iter().all(LossHistory::is_full);
        if window_full && crate::training::early_stop_check(&histories, config.train.loss_threshold) {
            stopped_early = true;
            break;
        }
    }
    finish(config, data, seed, registry, logs, round_millis, stopped_early)
}

/// Fixed-K baseline: loss-based identity on each worker's full data, one
/// full-batch least-squares step, federated averaging; always `max_rounds`.
pub fn run_c_sysid(config: &RunConfig, data: &PreparedData, seed: u64) -> std::result::Result<RunOutcome, RunFailure> {
    config.validate()?;
    let m = data.workers();
    let mut registry = initial_registry(config, data, seed)?;
    let mut logs = Vec::new();
    let mut round_millis = Vec::new();
    let alpha = config.train.learning_rate;

    for round in 0..config.max_rounds {
        let started = Instant::now();
        let results = (0..m)
            .into_par_iter()
            .map(|i| -> Result<(usize, LtiParams, f64, f64)> {
                let stats = &data.full_stats[i];
                let j = assign_identity_ifca_stats(stats, &registry.params)?;
                let params = stats.least_squares_update(&registry.params[j], alpha)?;
                let loss = loss_regularized(&params, &data.cc_views[i], 0.0)?;
                let fit = evaluate_fit(&params, &data.dataset.workers[i].cc, FitMode::Prediction)?;
                Ok((j, params, loss, fit.min_fit))
            })
            .collect::<Result<Vec<_>>>();
        let results = match results {
            Ok(r) => r,
            Err(error) => return Err(RunFailure { error, logs }),
        };
        let flags: Vec<usize> = results.iter().map(|r| r.0).collect();
        let losses: Vec<f64> = results.iter().map(|r| r.2).collect();
        let fits: Vec<f64> = results.iter().map(|r| r.3).collect();
        let worker_params: Vec<LtiParams> = results.into_iter().map(|r| r.1).collect();
        let step = || -> Result<ClusterRegistry> {
            let params = aggregate(&worker_params, &flags, &registry.params)?;
            ClusterRegistry::new(params, flags.clone())
        };
        registry = match step() {
            Ok(r) => r,
            Err(error) => return Err(RunFailure { error, logs }),
        };
        let radii = match spectral_radii(&registry.params) {
            Ok(r) => r,
            Err(error) => return Err(RunFailure { error, logs }),
        };
        logs.push(RoundLog {
            round,
            k: registry.k(),
            flags,
            loss: losses,
            min_fit: fits,
            moved: Vec::new(),
            spectral_radius: radii,
            clusters: registry.params.clone(),
        });
        round_millis.push(started.elapsed().as_secs_f64() * 1e3);
    }
    finish(config, data, seed, registry, logs, round_millis, false)
}

fn finish(
    config: &RunConfig,
    data: &PreparedData,
    seed: u64,
    registry: ClusterRegistry,
    logs: Vec<RoundLog>,
    round_millis: Vec<f64>,
    stopped_early: bool,
) -> std::result::Result<RunOutcome, RunFailure> {
    let wrap = |r: Result<(ClusterRegistry, Option<ClusterRegistry>, ExperimentSummary)>, logs: Vec<RoundLog>| match r {
        Ok(v) => Ok((v, logs)),
        Err(error) => Err(RunFailure { error, logs }),
    };
    let computed = (|| {
        let k_before_merge = registry.k();
        let (final_registry, pre_merge) = if config.apply_cm {
            let merged = cluster_merge(
                &registry.params,
                config.thresholds.merge_similarity,
                config.thresholds.norm2,
            )?;
            let flags = merged.remap_flags(&registry.flags);
            (ClusterRegistry::new(merged.params, flags)?, Some(registry.clone()))
        } else {
            (registry.clone(), None)
        };
        let summary = summarize(data, &final_registry, seed, logs.len(), stopped_early, k_before_merge)?;
        Ok((final_registry, pre_merge, summary))
    })();
    let ((registry, pre_merge, summary), logs) = wrap(computed, logs)?;
    Ok(RunOutcome {
        registry,
        pre_merge,
        logs,
        round_millis,
        summary,
    })
}

/// Scores the final registry on every worker's CC set in both inference modes.
pub fn summarize(
    data: &PreparedData,
    registry: &ClusterRegistry,
    seed: u64,
    rounds: usize,
    stopped_early: bool,
    k_before_merge: usize,
) -> Result<ExperimentSummary> {
    let labels = data.dataset.labels();
    let q = data.dataset.clusters.len();
    let score = |mode: FitMode| -> Result<FitSummary> {
        let fits = data
            .dataset
            .workers
            .par_iter()
            .enumerate()
            .map(|(i, w)| Ok(evaluate_fit(&registry.params[registry.flags[i]], &w.cc, mode)?.per_state))
            .collect::<Result<Vec<_>>>()?;
        Ok(FitSummary {
            per_cluster: cluster_mean_fit(&fits, &labels, q)?,
            fleet: fleet_mean_fit(&fits)?,
        })
    };
    let param_errors = data
        .dataset
        .ground_truth()
        .iter()
        .map(|truth| best_match_error(&registry.params, truth))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentSummary {
        seed,
        rounds,
        stopped_early,
        k_before_merge,
        k_final: registry.k(),
        nonempty_clusters: registry.member_counts().iter().filter(|&&c| c > 0).count(),
        mw_pct: misclassified_pct(&registry.flags, &labels)?,
        uc_pct: unstable_cluster_pct([registry.params.as_slice()])?,
        param_errors,
        fit_prediction: score(FitMode::Prediction)?,
        fit_simulation: score(FitMode::Simulation)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single repetition.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Most frequent value; ties go to the smallest.
    pub mode: f64,
}

impl MetricStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (mut mode, mut best, mut run) = (sorted[0], 0usize, 0usize);
        for (i, v) in sorted.iter().enumerate() {
            run = if i > 0 && sorted[i - 1] == *v { run + 1 } else { 1 };
            if run > best {
                best = run;
                mode = *v;
            }
        }
        Some(Self {
            mean,
            std,
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            mode,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRecord {
    pub index: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<ExperimentSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Everything written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub name: Option<String>,
    pub config: RunConfig,
    pub dataset_hash: String,
    pub repetitions: Vec<RepetitionRecord>,
    pub stats: BTreeMap<String, MetricStats>,
    /// Unstable final clusters pooled over all successful repetitions.
    pub uc_pct_pooled: Option<f64>,
    pub failures: usize,
}

impl SuiteSummary {
    pub fn successful(&self) -> impl Iterator<Item = &ExperimentSummary> {
        self.repetitions.iter().filter_map(|r| r.summary.as_ref())
    }

    /// Looks up `stat:metric` (`mean`, `std`, `min`, `max`, `mode`), plus
    /// `pooled:uc_pct` and `failures`.
    pub fn lookup(&self, key: &str) -> Option<f64> {
        match key {
            "failures" => return Some(self.failures as f64),
            "pooled:uc_pct" => return self.uc_pct_pooled,
            _ => {}
        }
        let (stat, metric) = key.split_once(':')?;
        let s = self.stats.get(metric)?;
        match stat {
            "mean" => Some(s.mean),
            "std" => Some(s.std),
            "min" => Some(s.min),
            "max" => Some(s.max),
            "mode" => Some(s.mode),
            _ => None,
        }
    }

    /// One row per repetition and metric, then mean and std rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("repetition,seed,metric,value\n");
        for rep in &self.repetitions {
            if let Some(s) = &rep.summary {
                for (k, v) in s.flat_metrics() {
                    out.push_str(&format!("{},{},{},{}\n", rep.index, rep.seed, k, format_f64(v)));
                }
            }
        }
        for (k, s) in &self.stats {
            out.push_str(&format!("mean,,{},{}\n", k, format_f64(s.mean)));
            out.push_str(&format!("std,,{},{}\n", k, format_f64(s.std)));
        }
        if let Some(uc) = self.uc_pct_pooled {
            out.push_str(&format!("pooled,,uc_pct,{}\n", format_f64(uc)));
        }
        out
    }
}

/// Output hooks for [`run_suite`].
pub trait SuiteObserver {
    fn repetition_done(&mut self, _index: usize, _outcome: &std::result::Result<RunOutcome, RunFailure>) {}
}

impl SuiteObserver for () {}

/// Runs the configured method for seeds `master_seed..master_seed + repetitions`
/// on one shared dataset.
pub fn run_suite(config: &RunConfig, data: &PreparedData, observer: &mut dyn SuiteObserver) -> Result<SuiteSummary> {
    config.validate()?;
    let mut repetitions = Vec::with_capacity(config.repetitions);
    let mut final_sets: Vec<Vec<LtiParams>> = Vec::new();
    for index in 0..config.repetitions {
        let seed = config.master_seed.wrapping_add(index as u64);
        let outcome = run(config, data, seed);
        observer.repetition_done(index, &outcome);
        let record = match outcome {
            Ok(o) => {
                final_sets.push(o.registry.params.clone());
                RepetitionRecord {
                    index,
                    seed,
                    summary: Some(o.summary),
                    error: None,
                }
            }
            Err(f) => RepetitionRecord {
                index,
                seed,
                summary: None,
                error: Some(f.to_string()),
            },
        };
        repetitions.push(record);
    }
    let failures = repetitions.iter().filter(|r| r.summary.is_none()).count();
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in repetitions.iter().filter_map(|r| r.summary.as_ref()) {
        for (k, v) in s.flat_metrics() {
            columns.entry(k).or_default().push(v);
        }
    }
    let stats = columns
        .into_iter()
        .filter_map(|(k, v)| MetricStats::from_values(&v).map(|s| (k, s)))
        .collect();
    let uc_pct_pooled = if final_sets.is_empty() {
        None
    } else {
        Some(unstable_cluster_pct(final_sets.iter().map(|s| s.as_slice()))?)
    };
    Ok(SuiteSummary {
        name: config.name.clone(),
        config: config.clone(),
        dataset_hash: data.dataset_hash.clone(),
        repetitions,
        stats,
        uc_pct_pooled,
        failures,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// `rounds.jsonl`, `timings.jsonl` and `clusters_final.json` for one run.
pub fn write_run_outputs(
    dir: &Path,
    logs: &[RoundLog],
    round_millis: &[f64],
    registry: Option<&ClusterRegistry>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rounds = String::new();
    for log in logs {
        rounds.push_str(&serde_json::to_string(log)?);
        rounds.push('\n');
    }
    write_file(&dir.join("rounds.jsonl"), &rounds)?;
    let mut timings = String::new();
    for (r, ms) in round_millis.iter().enumerate() {
        timings.push_str(&format!("{{\"round\":{r},\"wall_ms\":{ms:.3}}}\n"));
    }
    write_file(&dir.join("timings.jsonl"), &timings)?;
    if let Some(reg) = registry {
        write_file(&dir.join("clusters_final.json"), &serde_json::to_string_pretty(reg)?)?;
    }
    Ok(())
}

/// Writes `summary.json` and `summary.csv`.
pub fn write_suite_outputs(dir: &Path, summary: &SuiteSummary) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("summary.json"), &serde_json::to_string_pretty(summary)?)?;
    write_file(&dir.join("summary.csv"), &summary.to_csv())
}

/// Observer that writes each repetition's outputs under `dir/rep_XXX`.
pub struct DirectoryWriter<'a> {
    pub dir: &'a Path,
    pub errors: Vec<Error>,
}

impl SuiteObserver for DirectoryWriter<'_> {
    fn repetition_done(&mut self, index: usize, outcome: &std::result::Result<RunOutcome, RunFailure>) {
        let rep_dir = self.dir.join(format!("rep_{index:03}"));
        let res = match outcome {
            Ok(o) => write_run_outputs(&rep_dir, &o.logs, &o.round_millis, Some(&o.registry)),
            Err(f) => write_run_outputs(&rep_dir, &f.logs, &[], None),
        };
        if let Err(e) = res {
            self.errors.push(e);
        }
    }
}
