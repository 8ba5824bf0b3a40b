//! Class-rebalancing self-training for class-imbalanced semi-supervised
//! learning.
//!
//! The crate covers long-tailed data construction ([`data`]), a small
//! gradient-trained classifier ([`model`]), weak/strong feature
//! perturbations ([`augment`]), distribution alignment with temperature
//! scaling ([`rebalance`]), one generation of thresholded consistency
//! training ([`ssl`]), the multi-generation selection loop ([`crest`]) and
//! per-class diagnostics ([`metrics`]).

pub mod augment;
pub mod crest;
pub mod data;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod model;
pub mod rebalance;
pub mod rng;
pub mod ssl;

pub use crate::crest::{
    expand_labeled_set, run_crest, run_crest_with, sampling_rates, select_pseudo_labeled, CrestConfig,
    GenerationOutput, GenerationReport, RunFailure, SelectionResult,
};
pub use crate::data::{
    build_longtail_profile, load_csv_dataset, resample_weights, split_labeled_unlabeled, synth_gaussian_dataset,
    ClassProfile, Dataset, GaussianMixture, SplitPair, SynthParams,
};
pub use crate::error::{Error, Result};
pub use crate::exec::Execution;
pub use crate::model::{init_model, EmaModel, Model};
pub use crate::ssl::{AlignmentMode, PseudoLabel, SslConfig};
