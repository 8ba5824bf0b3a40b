//! Multi-generation class-rebalancing self-training.
//!
//! Each generation trains a fresh semi-supervised model on the current
//! labeled set, pseudo-labels the whole unlabeled pool with the EMA model,
//! keeps the most confident fraction `μ_l` of every predicted class, and
//! rebuilds the next labeled set as the original labeled set plus that
//! selection. Minority classes get higher rates.

use serde::{Deserialize, Serialize};

use crate::augment::{weak_augment, AugmentPolicy};
use crate::data::{ClassProfile, Dataset, SplitPair};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{confusion, pseudo_label_quality, ClassReport};
use crate::model::{argmax, Model};
use crate::rebalance::{align, temperature_schedule, MarginalState, TargetDistribution};
use crate::rng::SeedTree;
use crate::ssl::{train_generation, AlignmentMode, PseudoLabel, SslConfig, TrainingLog};

/// Which distribution ranks pseudo-labels during selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionConfidence {
    /// Aligned distribution (identical to raw when alignment is off).
    #[default]
    Refined,
    Raw,
}

/// Where the alignment prior p(y) is estimated from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    /// The original labeled set.
    #[default]
    Original,
    /// The current expanded labeled set.
    Expanded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrestConfig {
    /// Sampling exponent α.
    pub alpha: f64,
    /// Final generation index G (G + 1 generations in total).
    pub last_generation: usize,
    pub t_min: f64,
    /// When false no pseudo-labeled examples are ever added.
    pub expand_labeled: bool,
    /// Weak views averaged per unlabeled example in the pseudo-label sweep.
    pub sweep_views: usize,
    pub selection_confidence: SelectionConfidence,
    pub prior_source: PriorSource,
    pub seed: u64,
    pub ssl: SslConfig,
}

impl Default for CrestConfig {
    fn default() -> Self {
        CrestConfig {
            alpha: 1.0 / 3.0,
            last_generation: 5,
            t_min: 0.5,
            expand_labeled: true,
            sweep_views: 4,
            selection_confidence: SelectionConfidence::Refined,
            prior_source: PriorSource::Original,
            seed: 0,
            ssl: SslConfig::default(),
        }
    }
}

impl CrestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha: must be >= 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.t_min) {
            return Err(Error::Config(format!("t_min: must be in [0,1], got {}", self.t_min)));
        }
        if self.sweep_views == 0 {
            return Err(Error::Config("sweep_views: must be >= 1".into()));
        }
        self.ssl.validate()
    }

    /// Temperature used in generation `g`.
    pub fn temperature(&self, generation: usize) -> Result<f64> {
        match self.ssl.alignment {
            AlignmentMode::Off => Ok(1.0),
            AlignmentMode::Constant(t) => Ok(t),
            AlignmentMode::Scheduled if self.last_generation == 0 => Ok(1.0),
            AlignmentMode::Scheduled => temperature_schedule(generation, self.last_generation, self.t_min),
        }
    }
}

/// `μ_l = (N_{L+1-l} / N_1)^α` over classes in descending-count order.
pub fn sampling_rates(profile: &ClassProfile, alpha: f64) -> Vec<f64> {
    let counts = profile.counts();
    let n1 = counts[0] as f64;
    let last = counts.len() - 1;
    (0..counts.len())
        .map(|l| (counts[last - l] as f64 / n1).powf(alpha))
        .collect()
}

/// Examples kept for a class with `n` predictions at rate `mu`: `⌈μ·n⌉`.
///
/// A 1e-9 slack absorbs representation error in products that are integral
/// in exact arithmetic.
pub fn keep_count(mu: f64, n: usize) -> usize {
    if n == 0 || mu <= 0.0 {
        return 0;
    }
    let k = (mu * n as f64 - 1e-9).ceil().max(1.0) as usize;
    k.min(n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Chosen pseudo-labels, sorted by unlabeled index.
    pub chosen: Vec<PseudoLabel>,
    /// Predictions per class (`n_l`).
    pub available: Vec<usize>,
    /// Kept per class (`⌈μ_l n_l⌉`).
    pub requested: Vec<usize>,
}

impl SelectionResult {
    pub fn empty(classes: usize) -> Self {
        SelectionResult {
            chosen: Vec::new(),
            available: vec![0; classes],
            requested: vec![0; classes],
        }
    }

    pub fn len(&self) -> usize {
        self.chosen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chosen.is_empty()
    }

    pub fn per_class(&self) -> Vec<usize> {
        let mut out = vec![0; self.available.len()];
        for pl in &self.chosen {
            out[pl.label] += 1;
        }
        out
    }
}

/// Keeps the `⌈μ_l n_l⌉` most confident predictions of every class `l`;
/// equal confidences prefer the lower example index.
pub fn select_pseudo_labeled(pseudo_labels: &[PseudoLabel], rates: &[f64]) -> Result<SelectionResult> {
    let classes = rates.len();
    let mut by_class: Vec<Vec<&PseudoLabel>> = vec![Vec::new(); classes];
    for pl in pseudo_labels {
        if pl.label >= classes {
            return Err(Error::invalid(format!(
                "pseudo-label class {} out of range",
                pl.label + 1
            )));
        }
        by_class[pl.label].push(pl);
    }
    let mut chosen = Vec::new();
    let mut available = Vec::with_capacity(classes);
    let mut requested = Vec::with_capacity(classes);
    for (members, &mu) in by_class.iter_mut().zip(rates) {
        let k = keep_count(mu, members.len());
        available.push(members.len());
        requested.push(k);
        if k == 0 {
            continue;
        }
        let rank =
            |a: &&PseudoLabel, b: &&PseudoLabel| b.confidence.total_cmp(&a.confidence).then(a.index.cmp(&b.index));
        if k < members.len() {
            members.select_nth_unstable_by(k - 1, rank);
        }
        chosen.extend(members[..k].iter().map(|&pl| pl.clone()));
    }
    chosen.sort_by_key(|pl| pl.index);
    if chosen.windows(2).any(|w| w[0].index == w[1].index) {
        return Err(Error::invalid("duplicate unlabeled index in pseudo-labels"));
    }
    Ok(SelectionResult {
        chosen,
        available,
        requested,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Labeled,
    /// Pseudo-labeled copy of this unlabeled index.
    Pseudo(usize),
}

/// The labeled set for the next generation.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpandedSet {
    pub dataset: Dataset,
    pub provenance: Vec<Provenance>,
}

/// `X ∪ Ŝ`: every original labeled example with its label followed by every
/// selected unlabeled example under its pseudo-label.
pub fn expand_labeled_set(labeled: &Dataset, selection: &SelectionResult, unlabeled: &Dataset) -> Result<ExpandedSet> {
    let mut dataset = labeled.clone();
    let mut provenance = vec![Provenance::Labeled; labeled.len()];
    for pl in &selection.chosen {
        if pl.index >= unlabeled.len() {
            return Err(Error::invalid(format!(
                "selected index {} outside unlabeled set of size {}",
                pl.index,
                unlabeled.len()
            )));
        }
        dataset.push(unlabeled.row(pl.index), pl.label)?;
        provenance.push(Provenance::Pseudo(pl.index));
    }
    Ok(ExpandedSet { dataset, provenance })
}

/// Alignment inputs for the pseudo-label sweep.
#[derive(Clone, Copy, Debug)]
pub struct SweepAlignment<'a> {
    pub target: &'a TargetDistribution,
    pub marginal: &'a MarginalState,
}

/// One sweep entry: raw and refined distributions averaged over the views.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepEntry {
    pub raw: Vec<f64>,
    pub refined: Vec<f64>,
}

/// Predicts every unlabeled example over `views` weak views. Each example
/// draws from its own indexed stream, so the result is independent of how
/// the work is sharded.
pub fn pseudo_label_sweep(
    model: &Model,
    unlabeled: &Dataset,
    policy: &AugmentPolicy,
    alignment: Option<SweepAlignment<'_>>,
    views: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<SweepEntry>> {
    let tree = SeedTree::new(seed).child("sweep");
    let classes = model.dims().classes;
    exec.map_range(unlabeled.len(), |i| {
        let mut rng = tree.index(i as u64).stream();
        let mut raw = vec![0.0; classes];
        let mut refined = vec![0.0; classes];
        for _ in 0..views {
            let view = weak_augment(unlabeled.row(i), policy, &mut rng);
            let q = model.predict_proba(&view)?;
            let r = match alignment {
                Some(a) => align(&q, a.target, a.marginal),
                None => q.clone(),
            };
            raw.iter_mut().zip(&q).for_each(|(s, v)| *s += v);
            refined.iter_mut().zip(&r).for_each(|(s, v)| *s += v);
        }
        let n = views as f64;
        raw.iter_mut().for_each(|v| *v /= n);
        refined.iter_mut().for_each(|v| *v /= n);
        Ok(SweepEntry { raw, refined })
    })
    .into_iter()
    .collect()
}

/// Argmax predictions of `model` on every row of `data`.
pub fn predict_all(model: &Model, data: &Dataset, exec: Execution) -> Result<Vec<usize>> {
    let rows: Vec<&[f64]> = data.rows().collect();
    Ok(model
        .predict_proba_batch(&rows, exec)?
        .iter()
        .map(|p| argmax(p))
        .collect())
}

/// Evaluates `model` on `data` against its labels.
pub fn evaluate(model: &Model, data: &Dataset, exec: Execution) -> Result<ClassReport> {
    let preds = predict_all(model, data, exec)?;
    Ok(ClassReport::from_confusion(&confusion(
        &preds,
        data.labels(),
        data.num_classes(),
    )?))
}

/// Diagnostics for one generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub generation: usize,
    pub temperature: f64,
    pub alignment: bool,
    pub labeled_size: usize,
    pub sampling_rates: Vec<f64>,
    /// Sweep predictions per class (`n_l`).
    pub predicted_per_class: Vec<usize>,
    /// `|Ŝ|` per class.
    pub selected_per_class: Vec<usize>,
    pub selected_total: usize,
    /// Precision/recall of the selected pseudo-labels against hidden truth.
    pub selected_quality: ClassReport,
    /// Precision/recall of the full pseudo-label sweep against hidden truth.
    pub unlabeled_quality: ClassReport,
    pub test: ClassReport,
    pub test_mean_recall: f64,
    /// Final running marginal p̃(y) of the generation.
    pub marginal: Vec<f64>,
}

/// Everything produced by one generation, handed to the observer.
#[derive(Clone, Debug)]
pub struct GenerationOutput {
    pub report: GenerationReport,
    pub log: TrainingLog,
    pub model: Model,
    pub selection: SelectionResult,
}

/// Failure after zero or more completed generations.
#[derive(Debug)]
pub struct RunFailure {
    pub reports: Vec<GenerationReport>,
    pub error: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "failed after {} generation(s): {}", self.reports.len(), self.error)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub fn run_crest(
    data: &SplitPair,
    test: &Dataset,
    cfg: &CrestConfig,
) -> std::result::Result<Vec<GenerationReport>, RunFailure> {
    run_crest_with(data, test, cfg, |_| Ok(()))
}

/// Runs generations `0..=G`, calling `observe` after each one.
pub fn run_crest_with<F>(
    data: &SplitPair,
    test: &Dataset,
    cfg: &CrestConfig,
    mut observe: F,
) -> std::result::Result<Vec<GenerationReport>, RunFailure>
where
    F: FnMut(&GenerationOutput) -> Result<()>,
{
    let mut reports = Vec::new();
    let fail = |reports: Vec<GenerationReport>, error: Error| RunFailure { reports, error };
    if let Err(e) = cfg.validate() {
        return Err(fail(reports, e));
    }
    let original = &data.labeled;
    let unlabeled = &data.unlabeled;
    let profile = match original.profile() {
        Ok(p) => p,
        Err(e) => return Err(fail(reports, Error::Config(format!("labeled set: {e}")))),
    };
    if test.num_classes() != original.num_classes() || test.dim() != original.dim() {
        return Err(fail(
            reports,
            Error::Config("test set shape differs from training data".into()),
        ));
    }
    let rates = sampling_rates(&profile, cfg.alpha);
    let tree = SeedTree::new(cfg.seed);
    let exec = cfg.ssl.execution;

    let mut current = ExpandedSet {
        dataset: original.clone(),
        provenance: vec![Provenance::Labeled; original.len()],
    };
    for g in 0..=cfg.last_generation {
        let result = (|| -> Result<GenerationOutput> {
            let t = cfg.temperature(g)?;
            let prior = match cfg.prior_source {
                PriorSource::Original => profile.frequencies(),
                PriorSource::Expanded => {
                    let counts = current.dataset.class_counts();
                    let total: usize = counts.iter().sum();
                    counts.iter().map(|&c| c as f64 / total as f64).collect()
                }
            };
            let gen_tree = tree.child("generation").index(g as u64);
            let outcome = train_generation(
                &current.dataset,
                unlabeled,
                &cfg.ssl,
                &prior,
                t,
                gen_tree.child("train").seed_u64(),
            )?;
            let model = outcome.ema.into_model();

            let target = TargetDistribution::new(prior, t)?;
            let alignment = cfg.ssl.alignment.is_on().then_some(SweepAlignment {
                target: &target,
                marginal: &outcome.marginal,
            });
            let sweep = pseudo_label_sweep(
                &model,
                unlabeled,
                &cfg.ssl.augment,
                alignment,
                cfg.sweep_views,
                gen_tree.child("sweep").seed_u64(),
                exec,
            )?;
            let pseudo: Vec<PseudoLabel> = sweep
                .into_iter()
                .enumerate()
                .map(|(i, e)| {
                    let ranked = match cfg.selection_confidence {
                        SelectionConfidence::Refined => e.refined,
                        SelectionConfidence::Raw => e.raw,
                    };
                    PseudoLabel::from_distribution(i, ranked)
                })
                .collect();

            let classes = original.num_classes();
            let selection = if cfg.expand_labeled {
                select_pseudo_labeled(&pseudo, &rates)?
            } else {
                SelectionResult {
                    available: count_labels(pseudo.iter().map(|p| p.label), classes),
                    ..SelectionResult::empty(classes)
                }
            };

            let sweep_pairs: Vec<(usize, usize)> = pseudo.iter().map(|p| (p.label, unlabeled.label(p.index))).collect();
            let selected_pairs: Vec<(usize, usize)> = selection
                .chosen
                .iter()
                .map(|p| (p.label, unlabeled.label(p.index)))
                .collect();
            let test_report = evaluate(&model, test, exec)?;
            let test_mean_recall = test_report
                .mean_recall
                .ok_or_else(|| Error::UndefinedMetric("test set is missing a class".into()))?;
            let report = GenerationReport {
                generation: g,
                temperature: t,
                alignment: cfg.ssl.alignment.is_on(),
                labeled_size: current.dataset.len(),
                sampling_rates: rates.clone(),
                predicted_per_class: selection.available.clone(),
                selected_per_class: selection.per_class(),
                selected_total: selection.len(),
                selected_quality: pseudo_label_quality(&selected_pairs, classes)?,
                unlabeled_quality: pseudo_label_quality(&sweep_pairs, classes)?,
                test: test_report,
                test_mean_recall,
                marginal: outcome.marginal.probs().to_vec(),
            };
            Ok(GenerationOutput {
                report,
                log: outcome.log,
                model,
                selection,
            })
        })();
        let output = match result {
            Ok(o) => o,
            Err(e) => return Err(fail(reports, e)),
        };
        if let Err(e) = observe(&output) {
            return Err(fail(reports, e));
        }
        // Rebuilt from the original labeled set every generation.
        current = match expand_labeled_set(original, &output.selection, unlabeled) {
            Ok(s) => s,
            Err(e) => return Err(fail(reports, e)),
        };
        reports.push(output.report);
    }
    Ok(reports)
}

fn count_labels(labels: impl Iterator<Item = usize>, classes: usize) -> Vec<usize> {
    let mut out = vec![0; classes];
    for l in labels {
        out[l] += 1;
    }
    out
}
