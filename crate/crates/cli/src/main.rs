use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use fedsysid::config::RunConfig;
use fedsysid::datagen::{build_synthetic_dataset, DatasetSpec};
use fedsysid::io::export_dataset;
use fedsysid::orchestrator::{run_suite, write_suite_outputs, DirectoryWriter, PreparedData};
use fedsysid::report::{load_suite, render, ReportFormat};
use fedsysid::scenario::{check_scenario, evaluate, list_scenarios, Scenario, ScenarioVerdict};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(
    name = "fedsysid",
    version,
    about = "Federated identification of clustered linear systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and export it as CSV plus a manifest.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every repetition of a config and write logs and summaries.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate finished runs.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "md")]
        format: String,
        /// Scenario whose expectations are checked against the first run.
        #[arg(long)]
        check: Option<PathBuf>,
    },
    /// Run bundled scenarios and compare against their expectations.
    Check {
        /// Scenario name, path to a scenario file, or `all`.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "scenarios")]
        scenarios_dir: PathBuf,
        #[arg(long, default_value = "check_output")]
        out: PathBuf,
    },
}

/// An error tagged with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn config_err(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        error: error.into(),
    }
}

fn runtime_err(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        error: error.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { spec, out } => generate(&spec, &out),
        Command::Run { config, out } => run(&config, &out),
        Command::Report { runs, format, check } => report(&runs, &format, check.as_deref()),
        Command::Check {
            scenario,
            scenarios_dir,
            out,
        } => check(&scenario, &scenarios_dir, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn generate(spec_path: &Path, out: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(spec_path)
        .with_context(|| format!("reading {}", spec_path.display()))
        .map_err(config_err)?;
    let spec: DatasetSpec = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", spec_path.display()))
        .map_err(config_err)?;
    let truth = spec.ground_truth_params();
    spec.validate(&truth).map_err(config_err)?;
    let dataset = build_synthetic_dataset(&spec, &truth).map_err(runtime_err)?;
    let hash = export_dataset(&dataset, out).map_err(runtime_err)?;
    println!(
        "wrote {} workers to {} (sha256 {hash})",
        dataset.workers.len(),
        out.display()
    );
    Ok(())
}

fn run(config_path: &Path, out: &Path) -> Result<(), Failure> {
    let config = RunConfig::load(config_path).map_err(config_err)?;
    let data = PreparedData::from_source(&config.dataset).map_err(config_err)?;
    let mut writer = DirectoryWriter {
        dir: out,
        errors: Vec::new(),
    };
    let summary = run_suite(&config, &data, &mut writer).map_err(runtime_err)?;
    if let Some(e) = writer.errors.into_iter().next() {
        return Err(runtime_err(e));
    }
    write_suite_outputs(out, &summary).map_err(runtime_err)?;
    for key in ["mean:rounds", "mode:k_final", "mean:mw_pct"] {
        if let Some(v) = summary.lookup(key) {
            println!("{key} = {v:.4}");
        }
    }
    if let Some(uc) = summary.uc_pct_pooled {
        println!("pooled:uc_pct = {uc:.4}");
    }
    if summary.failures > 0 {
        return Err(runtime_err(anyhow!(
            "{} of {} repetitions failed; see {}",
            summary.failures,
            summary.repetitions.len(),
            out.join("summary.json").display()
        )));
    }
    Ok(())
}

fn report(runs: &[PathBuf], format: &str, check: Option<&Path>) -> Result<(), Failure> {
    let format: ReportFormat = format.parse().map_err(config_err)?;
    let suites = runs
        .iter()
        .map(|p| load_suite(p).with_context(|| format!("loading {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(config_err)?;
    println!("{}", render(&suites, format).map_err(runtime_err)?);
    if let Some(path) = check {
        let scenario = Scenario::load(path).map_err(config_err)?;
        let verdict = evaluate(&scenario, &suites[0].summary);
        print!("{}", verdict.render());
        if !verdict.passed {
            return Err(Failure {
                code: EXIT_CHECK,
                error: anyhow!("scenario {} failed", verdict.name),
            });
        }
    }
    Ok(())
}

fn resolve_scenarios(name: &str, dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    if name == "all" {
        return list_scenarios(dir).map_err(config_err);
    }
    let direct = PathBuf::from(name);
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let named = dir.join(format!("{name}.json"));
    if named.is_file() {
        Ok(vec![named])
    } else {
        Err(config_err(anyhow!("no scenario {name:?} in {}", dir.display())))
    }
}

fn check(name: &str, dir: &Path, out: &Path) -> Result<(), Failure> {
    let files = resolve_scenarios(name, dir)?;
    let scenarios = files
        .iter()
        .map(|f| {
            let s = Scenario::load(f).with_context(|| format!("loading {}", f.display()))?;
            RunConfig::load(&s.config).with_context(|| format!("scenario {} config", s.name))?;
            Ok(s)
        })
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(config_err)?;
    let mut verdicts: Vec<ScenarioVerdict> = Vec::new();
    for scenario in &scenarios {
        let run_dir = out.join(&scenario.name);
        let (verdict, _) = check_scenario(scenario, Some(&run_dir))
            .with_context(|| format!("scenario {}", scenario.name))
            .map_err(runtime_err)?;
        print!("{}", verdict.render());
        verdicts.push(verdict);
    }
    std::fs::create_dir_all(out)
        .and_then(|()| {
            let text = serde_json::to_string_pretty(&verdicts).map_err(std::io::Error::other)?;
            std::fs::write(out.join("check_report.json"), text)
        })
        .with_context(|| format!("writing {}", out.join("check_report.json").display()))
        .map_err(runtime_err)?;
    let failed: Vec<&str> = verdicts.iter().filter(|v| !v.passed).map(|v| v.name.as_str()).collect();
    println!(
        "{} of {} scenarios passed",
        verdicts.len() - failed.len(),
        verdicts.len()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_CHECK,
            error: anyhow!("failed scenarios: {}", failed.join(", ")),
        })
    }
}
