//! Dataset export and import: a directory of per-rollout CSV files plus a
//! JSON manifest. Numbers are written with 17 significant digits, so a
//! round trip is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{Dataset, DatasetSpec, GroundTruthCluster, WorkerDataset};
use crate::error::{Error, Result};
use crate::lti::{LtiParams, Rollout};

pub const MANIFEST_FILE: &str = "manifest.json";
const ROLLOUT_DIR: &str = "rollouts";
const FORMAT_TAG: &str = "fedsysid-dataset";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    spec: DatasetSpec,
    ground_truth: Vec<LtiParams>,
    workers: Vec<ManifestWorker>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestWorker {
    worker_id: usize,
    label: usize,
    train: Vec<String>,
    cc: Vec<String>,
}

/// Formats a float with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Rows are time steps; columns are `x1..xN, u1..uM`. The final row has
/// empty input fields because a rollout has one more state than inputs.
pub fn rollout_to_csv(r: &Rollout) -> String {
    let (n_x, n_u) = (r.state_dim(), r.input_dim());
    let mut out = String::new();
    let header: Vec<String> = (1..=n_x)
        .map(|i| format!("x{i}"))
        .chain((1..=n_u).map(|i| format!("u{i}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for t in 0..=r.steps() {
        let mut fields: Vec<String> = r.states().column(t).iter().map(|&v| format_f64(v)).collect();
        if t < r.steps() {
            fields.extend(r.inputs().column(t).iter().map(|&v| format_f64(v)));
        } else {
            fields.extend(std::iter::repeat_n(String::new(), n_u));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn rollout_from_csv(text: &str) -> Result<Rollout> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Format("empty rollout file".into()))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let n_x = names.iter().filter(|n| n.starts_with('x')).count();
    let n_u = names.iter().filter(|n| n.starts_with('u')).count();
    if n_x + n_u != names.len() || n_x == 0 || n_u == 0 {
        return Err(Error::Format(format!("unexpected header '{header}'")));
    }
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').map(str::trim).collect()).collect();
    if rows.len() < 2 {
        return Err(Error::Format("a rollout needs at least two rows".into()));
    }
    let parse = |s: &str| -> Result<f64> { s.parse::<f64>().map_err(|e| Error::Format(format!("'{s}': {e}"))) };
    let steps = rows.len() - 1;
    let mut states = DMatrix::zeros(n_x, steps + 1);
    let mut inputs = DMatrix::zeros(n_u, steps);
    for (t, row) in rows.iter().enumerate() {
        if row.len() != n_x + n_u {
            return Err(Error::Format(format!("row {} has {} fields", t + 1, row.len())));
        }
        for i in 0..n_x {
            states[(i, t)] = parse(row[i])?;
        }
        if t < steps {
            for j in 0..n_u {
                inputs[(j, t)] = parse(row[n_x + j])?;
            }
        } else if row[n_x..].iter().any(|f| !f.is_empty()) {
            return Err(Error::Format("the final row must not carry inputs".into()));
        }
    }
    Rollout::new(states, inputs)
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the dataset under `dir`; returns the manifest hash.
pub fn export_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<String> {
    let dir = dir.as_ref();
    let rollout_dir = dir.join(ROLLOUT_DIR);
    fs::create_dir_all(&rollout_dir).map_err(|e| Error::io(&rollout_dir, e))?;
    let mut workers = Vec::with_capacity(dataset.workers.len());
    for w in &dataset.workers {
        let save = |part: &str, rollouts: &[Rollout]| -> Result<Vec<String>> {
            rollouts
                .iter()
                .enumerate()
                .map(|(k, r)| {
                    let name = format!("{ROLLOUT_DIR}/w{:04}_{part}_{k:04}.csv", w.worker_id);
                    write(&dir.join(&name), rollout_to_csv(r).as_bytes())?;
                    Ok(name)
                })
                .collect()
        };
        let train = save("train", &w.train)?;
        let cc = save("cc", &w.cc)?;
        workers.push(ManifestWorker {
            worker_id: w.worker_id,
            label: w.label,
            train,
            cc,
        });
    }
    let manifest = Manifest {
        format: FORMAT_TAG.into(),
        version: 1,
        spec: dataset.spec.clone(),
        ground_truth: dataset.ground_truth(),
        workers,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    write(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(sha256_hex(text.as_bytes()))
}

/// Reads a dataset directory; returns it with the manifest hash.
pub fn import_dataset(dir: impl AsRef<Path>) -> Result<(Dataset, String)> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT_TAG {
        return Err(Error::Format(format!("unknown dataset format '{}'", manifest.format)));
    }
    let load = |names: &[String]| -> Result<Vec<Rollout>> {
        names
            .iter()
            .map(|n| {
                let p = dir.join(n);
                rollout_from_csv(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)
            })
            .collect()
    };
    let mut workers = Vec::with_capacity(manifest.workers.len());
    for w in &manifest.workers {
        if w.label >= manifest.ground_truth.len() {
            return Err(Error::Format(format!(
                "worker {} has unknown label {}",
                w.worker_id, w.label
            )));
        }
        workers.push(WorkerDataset {
            worker_id: w.worker_id,
            label: w.label,
            train: load(&w.train)?,
            cc: load(&w.cc)?,
        });
    }
    let clusters = manifest
        .ground_truth
        .iter()
        .enumerate()
        .map(|(q, p)| GroundTruthCluster {
            label: q,
            params: p.clone(),
            members: workers.iter().filter(|w| w.label == q).map(|w| w.worker_id).collect(),
        })
        .collect();
    let dataset = Dataset {
        spec: manifest.spec,
        clusters,
        workers,
    };
    Ok((dataset, sha256_hex(text.as_bytes())))
}
