//! Parameter sweeps over α, t_min or a constant alignment temperature.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crest_core::rng::derive_seed;
use crest_core::Execution;

use crate::config::{RunConfig, RunMode};
use crate::error::{CliError, Result};
use crate::run::execute;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Alpha,
    TMin,
    TConstant,
}

impl Axis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::Alpha => "alpha",
            Axis::TMin => "t_min",
            Axis::TConstant => "t_constant",
        }
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "alpha" => Ok(Axis::Alpha),
            "t_min" => Ok(Axis::TMin),
            "t_constant" => Ok(Axis::TConstant),
            other => Err(format!("unknown axis `{other}` (expected alpha, t_min or t_constant)")),
        }
    }
}

pub const SUMMARY_FILE: &str = "summary.csv";

/// One sub-run of a sweep.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub label: String,
    pub value: Option<f64>,
    pub config: RunConfig,
}

/// Sub-run configs. Each gets a training seed derived from the master seed
/// and its value; the data split seed is shared so every point sees the
/// same labeled/unlabeled partition. A `t_constant` sweep also includes the
/// scheduled-temperature run as a reference point.
pub fn plan(base: &RunConfig, axis: Axis, values: &[f64]) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(CliError::Config("sweep: no values given".into()));
    }
    let mut points = Vec::new();
    for &v in values {
        let mut cfg = base.clone();
        cfg.data_seed = Some(base.split_seed());
        cfg.seed = derive_seed(base.seed, &format!("sweep/{}/{v}", axis.as_str()));
        match axis {
            Axis::Alpha => {
                if !(v >= 0.0) {
                    return Err(CliError::Config(format!("sweep: alpha must be >= 0, got {v}")));
                }
                cfg.crest.alpha = v;
            }
            Axis::TMin => {
                if !(0.0..=1.0).contains(&v) {
                    return Err(CliError::Config(format!("sweep: t_min must be in [0,1], got {v}")));
                }
                cfg.crest.t_min = v;
                cfg.mode = RunMode::CrestPlus;
            }
            Axis::TConstant => {
                if !(0.0..=1.0).contains(&v) {
                    return Err(CliError::Config(format!("sweep: t_constant must be in [0,1], got {v}")));
                }
                cfg.mode = RunMode::DaConstant(v);
            }
        }
        points.push(SweepPoint {
            label: format!("{}={v}", axis.as_str()),
            value: Some(v),
            config: resolve(cfg)?,
        });
    }
    if axis == Axis::TConstant {
        let mut cfg = base.clone();
        cfg.data_seed = Some(base.split_seed());
        cfg.seed = derive_seed(base.seed, "sweep/t_constant/scheduled");
        cfg.mode = RunMode::CrestPlus;
        points.push(SweepPoint {
            label: "scheduled".into(),
            value: None,
            config: resolve(cfg)?,
        });
    }
    Ok(points)
}

fn resolve(cfg: RunConfig) -> Result<RunConfig> {
    // Re-parse so mode/seed-derived fields are recomputed and validated.
    let mut value = serde_json::to_value(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(crest) = value.get_mut("crest").and_then(|c| c.as_object_mut()) {
        crest.remove("seed");
        crest.remove("expand_labeled");
        if let Some(ssl) = crest.get_mut("ssl").and_then(|s| s.as_object_mut()) {
            ssl.remove("alignment");
        }
    }
    RunConfig::parse(&value.to_string())
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub summary: String,
    pub failures: Vec<(String, String)>,
}

/// Runs every point (sequentially unless `parallel`) under `out_dir` and
/// writes `summary.csv` with `axis,value,mode,generation,mean_recall`.
/// Failed points are recorded and the sweep carries on.
pub fn run_sweep(base: &RunConfig, axis: Axis, values: &[f64], out_dir: &Path, parallel: bool) -> Result<SweepOutcome> {
    let points = plan(base, axis, values)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let exec = if parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    };
    let results = exec.map(&points, |p| execute(&p.config, &out_dir.join(&p.label)));

    let mut summary = String::from("axis,value,mode,generation,mean_recall\n");
    let mut failures = Vec::new();
    for (p, res) in points.iter().zip(results) {
        let value = p.value.map(|v| v.to_string()).unwrap_or_else(|| "scheduled".into());
        match res {
            Ok(outcome) => {
                for r in &outcome.reports {
                    writeln!(
                        summary,
                        "{},{value},{},{},{:.6}",
                        axis.as_str(),
                        p.config.mode.label(),
                        r.generation,
                        r.test_mean_recall
                    )
                    .unwrap();
                }
            }
            Err(e) => failures.push((p.label.clone(), e.to_string())),
        }
    }
    let path = out_dir.join(SUMMARY_FILE);
    fs::write(&path, &summary).map_err(|e| CliError::io(&path, e))?;
    Ok(SweepOutcome { summary, failures })
}
