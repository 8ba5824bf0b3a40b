//! One generation of confidence-thresholded consistency training.
//!
//! Each step combines supervised cross-entropy on weakly perturbed labeled
//! examples with cross-entropy between strong views of unlabeled examples
//! and hard pseudo-labels taken from their weak views. The pseudo-labeling
//! distribution can be passed through distribution alignment first.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::augment::{strong_augment, weak_augment, AugmentPolicy};
use crate::data::{resample_weights_from_counts, Dataset};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{self, argmax, init_model, EmaModel, Gradient, Model, Target, Velocity};
use crate::rebalance::{align, MarginalState, TargetDistribution};
use crate::rng::{SeedTree, Stream};

/// Whether and how pseudo-labels are aligned to the class prior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    Off,
    /// Fixed temperature for every generation.
    Constant(f64),
    /// Temperature follows the per-generation linear schedule.
    Scheduled,
}

impl AlignmentMode {
    pub fn is_on(&self) -> bool {
        !matches!(self, AlignmentMode::Off)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SslConfig {
    /// Confidence threshold τ.
    pub threshold: f64,
    /// Unlabeled loss weight λ_u.
    pub unlabeled_weight: f64,
    pub steps: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub hidden: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub marginal_decay: f64,
    pub alignment: AlignmentMode,
    pub augment: AugmentPolicy,
    /// Draw labeled batches with inverse class-frequency probabilities.
    pub resample_labeled: bool,
    pub execution: Execution,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            threshold: 0.95,
            unlabeled_weight: 1.0,
            steps: 2000,
            labeled_batch: 32,
            unlabeled_batch: 224,
            hidden: 64,
            lr: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            ema_decay: 0.999,
            marginal_decay: crate::rebalance::DEFAULT_MARGINAL_DECAY,
            alignment: AlignmentMode::Off,
            augment: AugmentPolicy::default(),
            resample_labeled: false,
            execution: Execution::default(),
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("ssl.{field}: {msg}")));
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad("threshold", format!("must be in (0,1], got {}", self.threshold));
        }
        if !(self.unlabeled_weight >= 0.0) || !self.unlabeled_weight.is_finite() {
            return bad(
                "unlabeled_weight",
                format!("must be >= 0, got {}", self.unlabeled_weight),
            );
        }
        if self.steps == 0 {
            return bad("steps", "must be >= 1".into());
        }
        if self.labeled_batch == 0 {
            return bad("labeled_batch", "must be >= 1".into());
        }
        if self.unlabeled_batch == 0 {
            return bad("unlabeled_batch", "must be >= 1".into());
        }
        if self.hidden == 0 {
            return bad("hidden", "must be >= 1".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", format!("must be > 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", format!("must be in [0,1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", format!("must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("ema_decay", format!("must be in [0,1), got {}", self.ema_decay));
        }
        if !(0.0..1.0).contains(&self.marginal_decay) {
            return bad(
                "marginal_decay",
                format!("must be in [0,1), got {}", self.marginal_decay),
            );
        }
        if let AlignmentMode::Constant(t) = self.alignment {
            if !(0.0..=1.0).contains(&t) {
                return bad("alignment", format!("constant temperature must be in [0,1], got {t}"));
            }
        }
        self.augment
            .validate()
            .map_err(|e| Error::Config(format!("ssl.augment: {e}")))
    }

    /// Half-period cosine decay from `lr` toward 0 over `steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        self.lr * 0.5 * (1.0 + (PI * step as f64 / self.steps as f64).cos())
    }
}

/// A hard pseudo-label for one unlabeled example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub index: usize,
    pub label: usize,
    pub confidence: f64,
    pub distribution: Vec<f64>,
}

impl PseudoLabel {
    pub fn from_distribution(index: usize, distribution: Vec<f64>) -> Self {
        let label = argmax(&distribution);
        PseudoLabel {
            index,
            label,
            confidence: distribution[label],
            distribution,
        }
    }
}

/// Accepts the argmax of `refined` when its mass reaches `threshold`.
pub fn make_pseudo_label(index: usize, refined: &[f64], threshold: f64) -> Option<PseudoLabel> {
    let label = argmax(refined);
    (refined[label] >= threshold).then(|| PseudoLabel {
        index,
        label,
        confidence: refined[label],
        distribution: refined.to_vec(),
    })
}

/// Mutable training state for one generation.
#[derive(Clone, Debug)]
pub struct TrainerState {
    pub model: Model,
    pub velocity: Velocity,
    pub ema: EmaModel,
    pub marginal: MarginalState,
    pub step: usize,
}

impl TrainerState {
    pub fn new(model: Model, ema_decay: f64, marginal: MarginalState) -> Result<Self> {
        let dims = model.dims();
        Ok(TrainerState {
            ema: EmaModel::new(&model, ema_decay)?,
            velocity: Velocity::zeros(dims),
            model,
            marginal,
            step: 0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss_s: f64,
    pub loss_u: f64,
    pub accept_rate: f64,
    pub t: f64,
    pub lr: f64,
}

/// Per-step losses for one generation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<StepRecord>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss_s,loss_u,accept_rate,t,lr\n");
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step, r.loss_s, r.loss_u, r.accept_rate, r.t, r.lr
            )
            .unwrap();
        }
        out
    }
}

/// Result of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss_s: f64,
    pub loss_u: f64,
    pub accepted: usize,
    /// Unaligned predictions on the weak unlabeled views, in batch order.
    pub raw: Vec<Vec<f64>>,
    pub pseudo_labels: Vec<PseudoLabel>,
}

/// One training step: supervised loss, thresholded consistency loss, SGD,
/// EMA update and marginal update, in that order.
///
/// Views are drawn from `rng` in a fixed order (weak labeled views, then a
/// weak and a strong view per unlabeled example) so the stream consumed
/// never depends on which examples pass the threshold. `target = None`
/// disables alignment.
#[allow(clippy::too_many_arguments)]
pub fn ssl_step<X: AsRef<[f64]>, U: AsRef<[f64]>>(
    state: &mut TrainerState,
    labeled: &[X],
    labels: &[usize],
    unlabeled: &[U],
    cfg: &SslConfig,
    target: Option<&TargetDistribution>,
    lr: f64,
    rng: &mut dyn RngCore,
) -> Result<StepOutcome> {
    if labeled.is_empty() || unlabeled.is_empty() {
        return Err(Error::invalid("ssl_step needs nonempty labeled and unlabeled batches"));
    }
    let exec = cfg.execution;
    let policy = &cfg.augment;
    let step = state.step;
    let fail = |e: Error| Error::Training {
        step,
        message: e.to_string(),
    };

    let weak_x: Vec<Vec<f64>> = labeled.iter().map(|x| weak_augment(x.as_ref(), policy, rng)).collect();
    let mut weak_u = Vec::with_capacity(unlabeled.len());
    let mut strong_u = Vec::with_capacity(unlabeled.len());
    for u in unlabeled {
        weak_u.push(weak_augment(u.as_ref(), policy, rng));
        strong_u.push(strong_augment(u.as_ref(), policy, rng));
    }

    let targets: Vec<Target> = labels.iter().map(|&y| Target::Hard(y)).collect();
    let ones = vec![1.0; weak_x.len()];
    let (loss_s, grad_s) = model::loss_and_grad_with(&state.model, &weak_x, &targets, &ones, exec).map_err(fail)?;

    let raw = state.model.predict_proba_batch(&weak_u, exec).map_err(fail)?;
    let mut accepted_views = Vec::new();
    let mut accepted_targets = Vec::new();
    let mut pseudo_labels = Vec::new();
    for (i, q) in raw.iter().enumerate() {
        let refined = match target {
            Some(t) => align(q, t, &state.marginal),
            None => q.clone(),
        };
        if let Some(pl) = make_pseudo_label(i, &refined, cfg.threshold) {
            accepted_views.push(strong_u[i].as_slice());
            accepted_targets.push(Target::Hard(pl.label));
            pseudo_labels.push(pl);
        }
    }
    let (loss_u, grad_u) = if accepted_views.is_empty() {
        (0.0, None)
    } else {
        let w = vec![1.0; accepted_views.len()];
        let (l, g) =
            model::loss_and_grad_with(&state.model, &accepted_views, &accepted_targets, &w, exec).map_err(fail)?;
        (l, Some(g))
    };

    let total = loss_s + cfg.unlabeled_weight * loss_u;
    if !total.is_finite() {
        return Err(Error::Training {
            step,
            message: format!("non-finite loss (supervised {loss_s}, unlabeled {loss_u})"),
        });
    }
    let mut grad: Gradient = grad_s;
    if let Some(g) = &grad_u {
        if cfg.unlabeled_weight != 0.0 {
            grad.add_scaled(g, cfg.unlabeled_weight);
        }
    }
    model::sgd_step(
        &mut state.model,
        &mut state.velocity,
        &grad,
        lr,
        cfg.momentum,
        cfg.weight_decay,
    )
    .map_err(fail)?;
    state.ema.update(&state.model).map_err(fail)?;

    let classes = state.model.dims().classes;
    let mut mean = vec![0.0; classes];
    for q in &raw {
        mean.iter_mut().zip(q).for_each(|(m, v)| *m += v);
    }
    let n = raw.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    state.marginal.update(&mean).map_err(fail)?;
    state.step += 1;

    Ok(StepOutcome {
        loss_s,
        loss_u,
        accepted: pseudo_labels.len(),
        raw,
        pseudo_labels,
    })
}

/// Endless epoch-shuffled index stream.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: Stream,
}

impl EpochSampler {
    fn new(n: usize, rng: Stream) -> Self {
        EpochSampler {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

enum LabeledSampler {
    Epoch(EpochSampler),
    Weighted(WeightedIndex<f64>, Stream),
}

impl LabeledSampler {
    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        match self {
            LabeledSampler::Epoch(s) => s.next_batch(size),
            LabeledSampler::Weighted(dist, rng) => (0..size).map(|_| dist.sample(rng)).collect(),
        }
    }
}

/// Everything one generation of training produces.
#[derive(Clone, Debug)]
pub struct GenerationOutcome {
    pub ema: EmaModel,
    pub log: TrainingLog,
    pub marginal: MarginalState,
}

/// Trains a fresh model for `cfg.steps` steps.
///
/// `class_prior` is the distribution that alignment scales toward (before
/// temperature). `temperature` is ignored when alignment is off.
pub fn train_generation(
    labeled: &Dataset,
    unlabeled: &Dataset,
    cfg: &SslConfig,
    class_prior: &[f64],
    temperature: f64,
    seed: u64,
) -> Result<GenerationOutcome> {
    cfg.validate()?;
    let classes = labeled.num_classes();
    if unlabeled.num_classes() != classes || unlabeled.dim() != labeled.dim() {
        return Err(Error::Config("labeled and unlabeled sets disagree on shape".into()));
    }
    let counts = labeled.class_counts();
    if let Some(l) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Config(format!("class {} has no labeled examples", l + 1)));
    }
    if unlabeled.is_empty() {
        return Err(Error::Config("unlabeled set is empty".into()));
    }
    if class_prior.len() != classes {
        return Err(Error::Config(format!(
            "class prior has {} entries for {classes} classes",
            class_prior.len()
        )));
    }
    let target = if cfg.alignment.is_on() {
        Some(TargetDistribution::new(class_prior.to_vec(), temperature)?)
    } else {
        None
    };

    let tree = SeedTree::new(seed);
    let model = init_model(labeled.dim(), cfg.hidden, classes, tree.child("init").seed_u64())?;
    let marginal = MarginalState::uniform(classes, cfg.marginal_decay)?;
    let mut state = TrainerState::new(model, cfg.ema_decay, marginal)?;

    let mut labeled_sampler = if cfg.resample_labeled {
        let w = resample_weights_from_counts(&counts);
        let per_row: Vec<f64> = labeled.labels().iter().map(|&y| w.per_example[y]).collect();
        let dist = WeightedIndex::new(&per_row).map_err(|e| Error::Config(e.to_string()))?;
        LabeledSampler::Weighted(dist, tree.child("labeled").stream())
    } else {
        LabeledSampler::Epoch(EpochSampler::new(labeled.len(), tree.child("labeled").stream()))
    };
    let mut unlabeled_sampler = EpochSampler::new(unlabeled.len(), tree.child("unlabeled").stream());
    let mut augment_rng = tree.child("augment").stream();

    let mut log = TrainingLog::default();
    for k in 0..cfg.steps {
        let xi = labeled_sampler.next_batch(cfg.labeled_batch);
        let ui = unlabeled_sampler.next_batch(cfg.unlabeled_batch);
        let xs: Vec<&[f64]> = xi.iter().map(|&i| labeled.row(i)).collect();
        let ys: Vec<usize> = xi.iter().map(|&i| labeled.label(i)).collect();
        let us: Vec<&[f64]> = ui.iter().map(|&i| unlabeled.row(i)).collect();
        let lr = cfg.lr_at(k);
        let out = ssl_step(&mut state, &xs, &ys, &us, cfg, target.as_ref(), lr, &mut augment_rng)?;
        log.records.push(StepRecord {
            step: k,
            loss_s: out.loss_s,
            loss_u: out.loss_u,
            accept_rate: out.accepted as f64 / us.len() as f64,
            t: temperature,
            lr,
        });
    }
    Ok(GenerationOutcome {
        ema: state.ema,
        log,
        marginal: state.marginal,
    })
}
