//! End-to-end runs: data, generations, and every output file.

use std::fs;
use std::path::{Path, PathBuf};

use crest_core::metrics::{MetricsCsv, Split};
use crest_core::{run_crest_with, GenerationReport};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORTS_FILE: &str = "reports.json";

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    seeds: Seeds,
    /// Final running marginal of every completed generation.
    marginals: Vec<&'a [f64]>,
    completed_generations: usize,
    error: Option<String>,
}

#[derive(Serialize)]
struct Seeds {
    master: u64,
    split: u64,
    dataset: Option<u64>,
}

/// Renders the metrics CSV for a list of generation reports.
pub fn metrics_csv(reports: &[GenerationReport]) -> String {
    let mut csv = MetricsCsv::new();
    for r in reports {
        csv.add(r.generation, Split::Test, &r.test);
        csv.add(r.generation, Split::Unlabeled, &r.unlabeled_quality);
    }
    csv.finish()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    write(path, text + "\n")
}

/// Result of a completed run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub reports: Vec<GenerationReport>,
}

/// Runs `cfg`, writing into `out_dir`:
/// `manifest.json`, `reports.json`, `metrics.csv`, `train_log_gen{g}.csv`
/// and `model_gen{g}.json` (EMA parameters).
///
/// On a training failure the files for completed generations are still
/// written and the manifest records the error.
pub fn execute(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let (split, test) = cfg.materialize()?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;

    let mut io_error = None;
    let result = run_crest_with(&split, &test, &cfg.crest, |out| {
        let g = out.report.generation;
        let res = write(&out_dir.join(format!("train_log_gen{g}.csv")), out.log.to_csv()).and_then(|_| {
            let path = out_dir.join(format!("model_gen{g}.json"));
            write(&path, out.model.to_json().map_err(|e| CliError::io(&path, e))?)
        });
        res.map_err(|e| {
            let msg = e.to_string();
            io_error = Some(e);
            crest_core::Error::Config(msg)
        })
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    let (reports, error) = match result {
        Ok(r) => (r, None),
        Err(f) => (f.reports, Some(f.error)),
    };

    write(&out_dir.join(METRICS_FILE), metrics_csv(&reports))?;
    write_json(&out_dir.join(REPORTS_FILE), &reports)?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        seeds: Seeds {
            master: cfg.seed,
            split: cfg.split_seed(),
            dataset: match &cfg.dataset {
                crate::config::DatasetSpec::Synthetic(s) => Some(s.seed),
                crate::config::DatasetSpec::Csv { .. } => None,
            },
        },
        marginals: reports.iter().map(|r| r.marginal.as_slice()).collect(),
        completed_generations: reports.len(),
        error: error.as_ref().map(|e| e.to_string()),
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;

    match error {
        None => Ok(RunOutcome {
            output_dir: out_dir.to_path_buf(),
            reports,
        }),
        Some(e) => Err(e.into()),
    }
}

/// Loads a config file and runs it in its (possibly overridden) output dir.
pub fn run_config_file(path: &Path) -> Result<RunOutcome> {
    let cfg = RunConfig::load(path)?;
    let out = cfg.output_dir();
    execute(&cfg, &out)
}

/// Reads the resolved config back out of a run manifest.
pub fn config_from_manifest(path: &Path) -> Result<RunConfig> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let config = value
        .get("config")
        .ok_or_else(|| CliError::Config(format!("{}: no `config` entry", path.display())))?;
    RunConfig::parse(&config.to_string())
}
