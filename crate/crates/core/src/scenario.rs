//! Reproduction scenarios: a run config plus expected metric values, each
//! with a stated source.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::orchestrator::{run_suite, DirectoryWriter, PreparedData, SuiteSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Le,
    Lt,
    Ge,
    Gt,
    /// `|actual - value| <= tolerance`.
    Approx,
    /// `|actual - value| <= tolerance * |value|`.
    Rel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    /// Key understood by [`SuiteSummary::lookup`], e.g. `mean:mw_pct`.
    pub metric: String,
    pub op: Comparison,
    pub value: f64,
    #[serde(default)]
    pub tolerance: f64,
    /// Where the expected value comes from.
    #[serde(default)]
    pub provenance: String,
}

impl Expectation {
    pub fn holds(&self, actual: f64) -> bool {
        match self.op {
            Comparison::Le => actual <= self.value,
            Comparison::Lt => actual < self.value,
            Comparison::Ge => actual >= self.value,
            Comparison::Gt => actual > self.value,
            Comparison::Approx => (actual - self.value).abs() <= self.tolerance,
            Comparison::Rel => (actual - self.value).abs() <= self.tolerance * self.value.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Run config, relative to the scenario file.
    pub config: PathBuf,
    pub expectations: Vec<Expectation>,
    /// Negative controls pass when at least one expectation fails.
    #[serde(default)]
    pub expect_failure: bool,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Reads a scenario; its config path is resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut s = Self::from_json(&text)?;
        if s.config.is_relative() {
            if let Some(dir) = path.parent() {
                s.config = dir.join(&s.config);
            }
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.expectations.is_empty() {
            return Err(Error::Config(format!("scenario {:?} has no expectations", self.name)));
        }
        for e in &self.expectations {
            if e.provenance.trim().is_empty() {
                return Err(Error::Config(format!(
                    "scenario {:?}: expectation on {} has no provenance",
                    self.name, e.metric
                )));
            }
            if e.tolerance.is_nan() || e.tolerance < 0.0 || !e.value.is_finite() {
                return Err(Error::Config(format!(
                    "scenario {:?}: expectation on {} needs a finite value and tolerance >= 0",
                    self.name, e.metric
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub metric: String,
    pub op: Comparison,
    pub expected: f64,
    pub tolerance: f64,
    pub actual: Option<f64>,
    pub delta: Option<f64>,
    pub passed: bool,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioVerdict {
    pub name: String,
    pub passed: bool,
    pub expect_failure: bool,
    pub checks: Vec<CheckResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScenarioVerdict {
    /// One line per check plus a headline.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{} {}{}\n",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            if self.expect_failure { " (negative control)" } else { "" }
        );
        if let Some(e) = &self.error {
            out.push_str(&format!("  error: {e}\n"));
        }
        for c in &self.checks {
            let actual = c.actual.map_or_else(|| "missing".into(), |v| format!("{v:.6}"));
            let delta = c.delta.map_or_else(String::new, |d| format!(" delta {d:+.6}"));
            out.push_str(&format!(
                "  [{}] {} {:?} {} (tol {}): actual {}{}\n",
                if c.passed { "ok" } else { "xx" },
                c.metric,
                c.op,
                c.expected,
                c.tolerance,
                actual,
                delta
            ));
        }
        out
    }
}

/// Compares a finished suite against the scenario's expectations.
pub fn evaluate(scenario: &Scenario, summary: &SuiteSummary) -> ScenarioVerdict {
    let checks: Vec<CheckResult> = scenario
        .expectations
        .iter()
        .map(|e| {
            let actual = summary.lookup(&e.metric);
            CheckResult {
                metric: e.metric.clone(),
                op: e.op,
                expected: e.value,
                tolerance: e.tolerance,
                actual,
                delta: actual.map(|a| a - e.value),
                passed: actual.is_some_and(|a| e.holds(a)),
                provenance: e.provenance.clone(),
            }
        })
        .collect();
    let all = checks.iter().all(|c| c.passed);
    ScenarioVerdict {
        name: scenario.name.clone(),
        passed: all != scenario.expect_failure,
        expect_failure: scenario.expect_failure,
        checks,
        error: None,
    }
}

/// Runs the scenario's suite, writing outputs under `out_dir` when given.
/// Runtime failures produce a failed verdict rather than an error.
pub fn check_scenario(scenario: &Scenario, out_dir: Option<&Path>) -> Result<(ScenarioVerdict, Option<SuiteSummary>)> {
    let config = RunConfig::load(&scenario.config)?;
    let failed = |error: String| ScenarioVerdict {
        name: scenario.name.clone(),
        passed: scenario.expect_failure,
        expect_failure: scenario.expect_failure,
        checks: Vec::new(),
        error: Some(error),
    };
    let data = match PreparedData::from_source(&config.dataset) {
        Ok(d) => d,
        Err(e) => return Ok((failed(e.to_string()), None)),
    };
    let summary = match out_dir {
        Some(dir) => {
            let mut writer = DirectoryWriter {
                dir,
                errors: Vec::new(),
            };
            let s = run_suite(&config, &data, &mut writer);
            if let Some(e) = writer.errors.into_iter().next() {
                return Err(e);
            }
            s
        }
        None => run_suite(&config, &data, &mut ()),
    };
    let summary = match summary {
        Ok(s) => s,
        Err(e) => return Ok((failed(e.to_string()), None)),
    };
    if let Some(dir) = out_dir {
        crate::orchestrator::write_suite_outputs(dir, &summary)?;
    }
    Ok((evaluate(scenario, &summary), Some(summary)))
}

/// Scenario files (`*.json`) in a directory, sorted by file name.
pub fn list_scenarios(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}
