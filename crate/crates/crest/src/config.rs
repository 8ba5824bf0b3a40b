//! Run configuration: JSON with a versioned schema; unknown keys are errors.

use std::fs;
use std::path::{Path, PathBuf};

use crest_core::augment::AugmentPolicy;
use crest_core::data::{load_csv_dataset, split_labeled_unlabeled, ClassProfile, Dataset, SplitPair, SynthParams};
use crest_core::rng::derive_seed;
use crest_core::{AlignmentMode, CrestConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Overrides the configured output directory when set.
pub const OUTPUT_ROOT_ENV: &str = "CREST_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Semi-supervised training only; the labeled set is never expanded.
    Baseline,
    /// Class-rebalancing selection without alignment.
    Crest,
    /// Selection plus alignment on the progressive temperature schedule.
    CrestPlus,
    /// Selection plus alignment at a fixed temperature.
    DaConstant(f64),
}

impl RunMode {
    pub fn alignment(&self) -> AlignmentMode {
        match self {
            RunMode::Baseline | RunMode::Crest => AlignmentMode::Off,
            RunMode::CrestPlus => AlignmentMode::Scheduled,
            RunMode::DaConstant(t) => AlignmentMode::Constant(*t),
        }
    }

    pub fn expands(&self) -> bool {
        !matches!(self, RunMode::Baseline)
    }

    pub fn label(&self) -> String {
        match self {
            RunMode::Baseline => "baseline".into(),
            RunMode::Crest => "crest".into(),
            RunMode::CrestPlus => "crest_plus".into(),
            RunMode::DaConstant(t) => format!("da_constant({t})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub gamma: f64,
    pub n1: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Size of every class in the balanced test set.
    pub test_per_class: usize,
}

impl SyntheticSpec {
    pub fn params(&self) -> SynthParams {
        SynthParams {
            num_classes: self.num_classes,
            gamma: self.gamma,
            n1: self.n1,
            dim: self.dim,
            separation: self.separation,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Csv { train: PathBuf, test: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub dataset: DatasetSpec,
    /// Label fraction β.
    pub beta: f64,
    pub mode: RunMode,
    /// Master seed; training streams derive from it.
    pub seed: u64,
    /// Seed of the labeled/unlabeled split; defaults to `seed`.
    #[serde(default)]
    pub data_seed: Option<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub crest: CrestConfig,
}

/// Keys under `crest` that `mode` and `seed` determine.
const DERIVED_KEYS: [&str; 3] = ["/crest/seed", "/crest/expand_labeled", "/crest/ssl/alignment"];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        // Relative dataset paths are resolved against the config's directory.
        if let (DatasetSpec::Csv { train, test }, Some(dir)) = (&mut cfg.dataset, path.parent()) {
            for p in [train, test] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Parses and resolves a config: `mode` and `seed` fill the derived
    /// `crest` fields, and the augmentation policy defaults to the
    /// generator's noise scale.
    pub fn parse(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let mut cfg: RunConfig = serde_json::from_value(raw.clone()).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                cfg.schema_version
            )));
        }
        let explicit: Vec<bool> = DERIVED_KEYS.iter().map(|k| raw.pointer(k).is_some()).collect();
        let given = cfg.crest.clone();
        cfg.resolve(raw.pointer("/crest/ssl/augment").is_none());
        let derived_values = [
            given.seed == cfg.crest.seed,
            given.expand_labeled == cfg.crest.expand_labeled,
            given.ssl.alignment == cfg.crest.ssl.alignment,
        ];
        for ((key, set), same) in DERIVED_KEYS.iter().zip(explicit).zip(derived_values) {
            if set && !same {
                return Err(CliError::Config(format!(
                    "{}: conflicts with the value implied by `mode`/`seed`",
                    key.trim_start_matches('/').replace('/', ".")
                )));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, default_augment: bool) {
        self.crest.seed = self.seed;
        self.crest.expand_labeled = self.mode.expands();
        self.crest.ssl.alignment = self.mode.alignment();
        if self.data_seed.is_none() {
            self.data_seed = Some(self.seed);
        }
        if default_augment {
            if let DatasetSpec::Synthetic(s) = &self.dataset {
                self.crest.ssl.augment = AugmentPolicy::for_noise(s.noise_sigma);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(CliError::Config(format!("beta: must be in (0,1), got {}", self.beta)));
        }
        if let RunMode::DaConstant(t) = self.mode {
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::Config(format!(
                    "mode: da_constant temperature must be in [0,1], got {t}"
                )));
            }
        }
        if let DatasetSpec::Synthetic(s) = &self.dataset {
            if s.test_per_class == 0 {
                return Err(CliError::Config(
                    "dataset.synthetic.test_per_class: must be >= 1".into(),
                ));
            }
            s.params()
                .profile()
                .map_err(|e| CliError::Config(format!("dataset.synthetic: {e}")))?;
            if !(s.separation > 0.0) || !(s.noise_sigma > 0.0) || s.dim < 2 {
                return Err(CliError::Config(
                    "dataset.synthetic: need dim >= 2, separation > 0, noise_sigma > 0".into(),
                ));
            }
        }
        self.crest
            .validate()
            .map_err(|e| CliError::Config(format!("crest: {e}")))
    }

    /// Output directory after applying the environment override.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root),
            _ => self.output_dir.clone(),
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    /// Labeled/unlabeled split and balanced test set.
    pub fn materialize(&self) -> Result<(SplitPair, Dataset)> {
        let (train, test) = match &self.dataset {
            DatasetSpec::Synthetic(s) => {
                let params = s.params();
                let train = params.generate()?;
                let test_counts = ClassProfile::uniform(s.num_classes, s.test_per_class)?;
                let test = params
                    .mixture()?
                    .sample(test_counts.counts(), derive_seed(s.seed, "test"))?;
                (train, test)
            }
            DatasetSpec::Csv { train, test } => {
                let train = load_csv_dataset(train)?;
                let test = load_csv_dataset(test)?;
                // Test labels must use the same class numbering as training.
                let remap: Vec<usize> = {
                    let mut inv = vec![usize::MAX; train.class_map.len()];
                    for (canonical, &raw) in train.class_map.iter().enumerate() {
                        inv[raw - 1] = canonical;
                    }
                    inv
                };
                let mut test_ds = Dataset::empty(test.dataset.dim(), train.dataset.num_classes());
                for (x, &y) in test.dataset.rows().zip(test.dataset.labels()) {
                    let raw = test.class_map[y];
                    let Some(&c) = remap.get(raw - 1) else {
                        return Err(CliError::Config(format!(
                            "test label {raw} does not occur in training data"
                        )));
                    };
                    test_ds.push(x, c)?;
                }
                (train.dataset, test_ds)
            }
        };
        if train.dim() != test.dim() {
            return Err(CliError::Config(format!(
                "dataset: train has {} features, test has {}",
                train.dim(),
                test.dim()
            )));
        }
        let split = split_labeled_unlabeled(&train, self.beta, self.split_seed())?;
        Ok((split, test))
    }
}
