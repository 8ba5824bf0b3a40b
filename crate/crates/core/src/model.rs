//! One-hidden-layer ReLU perceptron with a softmax head.
//!
//! Parameters live in one flat vector laid out as
//! `[w1 (h x d), b1 (h), w2 (L x h), b2 (L)]`, row-major. Gradients,
//! optimizer velocity and the EMA shadow share that layout.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::SeedTree;

/// Examples per accumulation chunk. Fixed so gradients are bit-identical
/// regardless of how chunks are scheduled.
const GRAD_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Dims {
    pub fn param_count(&self) -> usize {
        self.hidden * self.input + self.hidden + self.classes * self.hidden + self.classes
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.classes * self.hidden;
        (b1, w2, b2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    dims: Dims,
    params: Vec<f64>,
    step: u64,
}

/// A gradient with the same layout as [`Model`] parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl Gradient {
    pub fn zeros(dims: Dims) -> Self {
        Gradient(vec![0.0; dims.param_count()])
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a += scale * b);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Output-layer bias block.
    pub fn output_bias<'a>(&'a self, dims: &Dims) -> &'a [f64] {
        &self.0[dims.offsets().2..]
    }
}

/// Training target for one example.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Hard(usize),
    Soft(Vec<f64>),
}

/// He-uniform bound for the ReLU layer, Glorot-uniform for the output layer.
pub fn init_model(input: usize, hidden: usize, classes: usize, seed: u64) -> Result<Model> {
    if input == 0 || hidden == 0 || classes == 0 {
        return Err(Error::invalid(format!(
            "model dimensions must be positive, got d={input} h={hidden} L={classes}"
        )));
    }
    let dims = Dims { input, hidden, classes };
    let mut rng = SeedTree::new(seed).child("init").stream();
    let mut params = vec![0.0; dims.param_count()];
    let (b1, w2, b2) = dims.offsets();
    let bound1 = (6.0 / input as f64).sqrt();
    for w in &mut params[..b1] {
        *w = rng.random_range(-bound1..bound1);
    }
    let bound2 = (6.0 / (hidden + classes) as f64).sqrt();
    for w in &mut params[w2..b2] {
        *w = rng.random_range(-bound2..bound2);
    }
    Ok(Model { dims, params, step: 0 })
}

impl Model {
    /// A model with every parameter set to zero.
    pub fn zeros(dims: Dims) -> Self {
        Model {
            dims,
            params: vec![0.0; dims.param_count()],
            step: 0,
        }
    }

    pub fn from_params(dims: Dims, params: Vec<f64>, step: u64) -> Result<Self> {
        if params.len() != dims.param_count() {
            return Err(Error::DimensionMismatch {
                expected: dims.param_count(),
                actual: params.len(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameter".into()));
        }
        Ok(Model { dims, params, step })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_layer_bias(&self) -> &[f64] {
        let (b1, w2, _) = self.dims.offsets();
        &self.params[b1..w2]
    }

    pub fn output_bias(&self) -> &[f64] {
        &self.params[self.dims.offsets().2..]
    }

    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let b2 = self.dims.offsets().2;
        &mut self.params[b2..]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims.input {
            return Err(Error::DimensionMismatch {
                expected: self.dims.input,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Hidden activations and logits.
    fn forward(&self, x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        let Dims {
            input,
            hidden: h,
            classes,
        } = self.dims;
        let (b1, w2, b2) = self.dims.offsets();
        for j in 0..h {
            let row = &self.params[j * input..(j + 1) * input];
            let pre = self.params[b1 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            hidden[j] = pre.max(0.0);
        }
        for k in 0..classes {
            let row = &self.params[w2 + k * h..w2 + (k + 1) * h];
            logits[k] = self.params[b2 + k] + row.iter().zip(hidden.iter()).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut hidden = vec![0.0; self.dims.hidden];
        let mut logits = vec![0.0; self.dims.classes];
        self.forward(x, &mut hidden, &mut logits);
        Ok(logits)
    }

    /// Class probabilities for one example.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut logits = self.logits(x)?;
        softmax_in_place(&mut logits);
        Ok(logits)
    }

    /// Probabilities for every row, in row order.
    pub fn predict_proba_batch<R>(&self, rows: &[R], exec: Execution) -> Result<Vec<Vec<f64>>>
    where
        R: AsRef<[f64]> + Sync,
    {
        exec.map(rows, |x| self.predict_proba(x.as_ref())).into_iter().collect()
    }

    /// Argmax class with lowest-index tie-break.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }
}

/// Numerically stable softmax via log-sum-exp.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter_mut().for_each(|v| *v = (*v - lse).exp());
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Weighted mean cross-entropy `sum w_i CE_i / sum w_i` and its gradient.
///
/// A batch whose weights sum to zero has loss 0 and a zero gradient.
pub fn loss_and_grad<R>(model: &Model, batch: &[R], targets: &[Target], weights: &[f64]) -> Result<(f64, Gradient)>
where
    R: AsRef<[f64]> + Sync,
{
    loss_and_grad_with(model, batch, targets, weights, Execution::Sequential)
}

pub fn loss_and_grad_with<R>(
    model: &Model,
    batch: &[R],
    targets: &[Target],
    weights: &[f64],
    exec: Execution,
) -> Result<(f64, Gradient)>
where
    R: AsRef<[f64]> + Sync,
{
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if targets.len() != batch.len() || weights.len() != batch.len() {
        return Err(Error::invalid(format!(
            "batch has {} rows but {} targets and {} weights",
            batch.len(),
            targets.len(),
            weights.len()
        )));
    }
    let dims = model.dims;
    for ((x, t), &w) in batch.iter().zip(targets).zip(weights) {
        let x = x.as_ref();
        model.check_input(x)?;
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("NaN input feature".into()));
        }
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::invalid(format!("example weight must be >= 0, got {w}")));
        }
        match t {
            Target::Hard(y) if *y >= dims.classes => {
                return Err(Error::invalid(format!("target class {} out of range", y + 1)))
            }
            Target::Soft(p) if p.len() != dims.classes => {
                return Err(Error::DimensionMismatch {
                    expected: dims.classes,
                    actual: p.len(),
                })
            }
            _ => {}
        }
    }
    let total_weight: f64 = weights.iter().sum();
    if total_weight == 0.0 {
        return Ok((0.0, Gradient::zeros(dims)));
    }

    let items: Vec<(usize, f64)> = weights.iter().copied().enumerate().collect();
    let partials = exec.map_chunks(&items, GRAD_CHUNK, |chunk| {
        let mut grad = Gradient::zeros(dims);
        let mut loss = 0.0;
        let mut hidden = vec![0.0; dims.hidden];
        let mut probs = vec![0.0; dims.classes];
        let mut dhidden = vec![0.0; dims.hidden];
        for &(i, w) in chunk {
            if w == 0.0 {
                continue;
            }
            loss += w * accumulate_example(
                model,
                batch[i].as_ref(),
                &targets[i],
                w,
                &mut grad,
                &mut hidden,
                &mut probs,
                &mut dhidden,
            );
        }
        (loss, grad)
    });
    let mut loss = 0.0;
    let mut grad = Gradient::zeros(dims);
    for (l, g) in &partials {
        loss += l;
        grad.add_scaled(g, 1.0);
    }
    loss /= total_weight;
    grad.0.iter_mut().for_each(|g| *g /= total_weight);
    Ok((loss, grad))
}

/// Adds `w * dCE/dθ` for one example into `grad`; returns the unweighted CE.
#[allow(clippy::too_many_arguments)]
fn accumulate_example(
    model: &Model,
    x: &[f64],
    target: &Target,
    w: f64,
    grad: &mut Gradient,
    hidden: &mut [f64],
    probs: &mut [f64],
    dhidden: &mut [f64],
) -> f64 {
    let Dims {
        input,
        hidden: h,
        classes,
    } = model.dims;
    let (b1, w2, b2) = model.dims.offsets();
    model.forward(x, hidden, probs);
    let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + probs.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let ce = match target {
        Target::Hard(y) => lse - probs[*y],
        Target::Soft(t) => t.iter().zip(probs.iter()).map(|(ti, zi)| ti * (lse - zi)).sum(),
    };
    probs.iter_mut().for_each(|z| *z = (*z - lse).exp());
    // dL/dz = p - target (soft targets are assumed to sum to one).
    match target {
        Target::Hard(y) => probs[*y] -= 1.0,
        Target::Soft(t) => probs.iter_mut().zip(t).for_each(|(p, ti)| *p -= ti),
    }
    let g = &mut grad.0;
    dhidden.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..classes {
        let dz = w * probs[k];
        g[b2 + k] += dz;
        let row = w2 + k * h;
        for j in 0..h {
            g[row + j] += dz * hidden[j];
            dhidden[j] += dz * model.params[row + j];
        }
    }
    for j in 0..h {
        // Subgradient of max(0, .) at 0 is 0.
        if hidden[j] <= 0.0 {
            continue;
        }
        let d = dhidden[j];
        g[b1 + j] += d;
        let row = j * input;
        for (gi, xi) in g[row..row + input].iter_mut().zip(x) {
            *gi += d * xi;
        }
    }
    ce
}

/// Momentum buffer for [`sgd_step`].
#[derive(Clone, Debug, PartialEq)]
pub struct Velocity(pub Vec<f64>);

impl Velocity {
    pub fn zeros(dims: Dims) -> Self {
        Velocity(vec![0.0; dims.param_count()])
    }
}

/// `v <- momentum*v + grad + weight_decay*θ; θ <- θ - lr*v`.
///
/// On error neither the model nor the velocity is modified.
pub fn sgd_step(
    model: &mut Model,
    velocity: &mut Velocity,
    grad: &Gradient,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::invalid(format!("learning rate must be > 0, got {lr}")));
    }
    let n = model.dims.param_count();
    if grad.0.len() != n || velocity.0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: grad.0.len().min(velocity.0.len()),
        });
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    for ((theta, v), g) in model.params.iter_mut().zip(&mut velocity.0).zip(&grad.0) {
        *v = momentum * *v + g + weight_decay * *theta;
        *theta -= lr * *v;
    }
    model.step += 1;
    Ok(())
}

/// Exponential moving average of model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaModel {
    shadow: Model,
    decay: f64,
}

impl EmaModel {
    pub fn new(model: &Model, decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::invalid(format!("EMA decay must be in [0,1), got {decay}")));
        }
        Ok(EmaModel {
            shadow: model.clone(),
            decay,
        })
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn model(&self) -> &Model {
        &self.shadow
    }

    pub fn into_model(self) -> Model {
        self.shadow
    }

    /// `shadow <- m*shadow + (1-m)*θ`.
    pub fn update(&mut self, model: &Model) -> Result<()> {
        if model.dims != self.shadow.dims {
            return Err(Error::invalid(format!(
                "EMA shape mismatch: {:?} vs {:?}",
                self.shadow.dims, model.dims
            )));
        }
        let m = self.decay;
        for (s, &t) in self.shadow.params.iter_mut().zip(&model.params) {
            *s = m * *s + (1.0 - m) * t;
        }
        self.shadow.step = model.step;
        Ok(())
    }
}

pub fn ema_update(ema: &mut EmaModel, model: &Model) -> Result<()> {
    ema.update(model)
}

pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Worst relative error between the analytic gradient and central
/// differences with step 1e-5, over every parameter.
pub fn grad_check<R>(model: &Model, batch: &[R], targets: &[Target], weights: &[f64]) -> Result<f64>
where
    R: AsRef<[f64]> + Sync,
{
    let (_, analytic) = loss_and_grad(model, batch, targets, weights)?;
    grad_check_against(model, batch, targets, weights, &analytic)
}

/// Like [`grad_check`] but compares against a caller-supplied gradient.
pub fn grad_check_against<R>(
    model: &Model,
    batch: &[R],
    targets: &[Target],
    weights: &[f64],
    analytic: &Gradient,
) -> Result<f64>
where
    R: AsRef<[f64]> + Sync,
{
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..model.params.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + GRAD_CHECK_STEP;
        let (plus, _) = loss_and_grad(&probe, batch, targets, weights)?;
        probe.params[i] = orig - GRAD_CHECK_STEP;
        let (minus, _) = loss_and_grad(&probe, batch, targets, weights)?;
        probe.params[i] = orig;
        let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
        let a = analytic.0[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// JSON checkpoint. Floats are written in shortest round-trip form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub dims: Dims,
    pub step: u64,
    pub params: Vec<f64>,
}

impl From<&Model> for Checkpoint {
    fn from(m: &Model) -> Self {
        Checkpoint {
            dims: m.dims,
            step: m.step,
            params: m.params.clone(),
        }
    }
}

impl Model {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        Model::from_params(c.dims, c.params, c.step)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Model::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_batch(seed: u64, n: usize, d: usize, classes: usize) -> (Vec<Vec<f64>>, Vec<Target>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let xs = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let ts = (0..n).map(|_| Target::Hard(rng.random_range(0..classes))).collect();
        (xs, ts)
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_model(5, 8, 3, 9).unwrap();
        assert_eq!(a, init_model(5, 8, 3, 9).unwrap());
        assert_ne!(a.params(), init_model(5, 8, 3, 10).unwrap().params());
        assert!(a.first_layer_bias().iter().all(|&b| b == 0.0));
        assert!(a.output_bias().iter().all(|&b| b == 0.0));
        assert!(init_model(0, 8, 3, 1).is_err());
        assert!(init_model(5, 0, 3, 1).is_err());
        assert!(init_model(5, 8, 0, 1).is_err());
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = Model::zeros(Dims {
            input: 3,
            hidden: 4,
            classes: 5,
        });
        let p = m.predict_proba(&[1.0, -2.0, 3.0]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert!(matches!(m.predict_proba(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn hand_built_logits() {
        // Hidden layer passes x through; output logits = (ln 3, 0).
        let dims = Dims {
            input: 1,
            hidden: 1,
            classes: 2,
        };
        let params = vec![1.0, 0.0, 0.0, 0.0, 3f64.ln(), 0.0];
        let m = Model::from_params(dims, params, 0).unwrap();
        let p = m.predict_proba(&[1.0]).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-12);
        assert!((p[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance() {
        let z = [0.3, -1.2, 4.0, 2.2];
        let shifted: Vec<f64> = z.iter().map(|v| v + 123.25).collect();
        let a = softmax(&z);
        let b = softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x.abs());
        }
    }

    #[test]
    fn stationary_soft_target() {
        let m = init_model(3, 4, 3, 2).unwrap();
        let x = vec![0.5, -0.2, 0.9];
        let p = m.predict_proba(&x).unwrap();
        let (_, g) = loss_and_grad(&m, &[x], &[Target::Soft(p)], &[1.0]).unwrap();
        assert!(g.output_bias(&m.dims()).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn zero_weights_give_zero_loss() {
        let m = init_model(3, 4, 3, 2).unwrap();
        let (xs, ts) = random_batch(1, 4, 3, 3);
        let (loss, g) = loss_and_grad(&m, &xs, &ts, &[0.0; 4]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_rejects_bad_input() {
        let m = init_model(2, 4, 3, 2).unwrap();
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(loss_and_grad(&m, &empty, &[], &[]).is_err());
        let nan = vec![vec![f64::NAN, 0.0]];
        assert!(matches!(
            loss_and_grad(&m, &nan, &[Target::Hard(0)], &[1.0]),
            Err(Error::NonFinite(_))
        ));
        let x = vec![vec![0.0, 0.0]];
        assert!(loss_and_grad(&m, &x, &[Target::Hard(3)], &[1.0]).is_err());
        assert!(loss_and_grad(&m, &x, &[Target::Hard(0)], &[-1.0]).is_err());
    }

    #[test]
    fn single_example_grad_matches_finite_differences() {
        let m = init_model(3, 4, 3, 17).unwrap();
        let (xs, ts) = random_batch(17, 1, 3, 3);
        let err = grad_check(&m, &xs, &ts, &[1.0]).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn soft_target_grad_matches_finite_differences() {
        let m = init_model(3, 5, 4, 3).unwrap();
        let (xs, _) = random_batch(3, 3, 3, 4);
        let ts = vec![
            Target::Soft(vec![0.1, 0.2, 0.3, 0.4]),
            Target::Soft(vec![0.25; 4]),
            Target::Hard(2),
        ];
        let err = grad_check(&m, &xs, &ts, &[1.0, 0.5, 2.0]).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let m = init_model(3, 4, 3, 5).unwrap();
        let (xs, ts) = random_batch(5, 3, 3, 3);
        let w = [1.0; 3];
        let (_, mut g) = loss_and_grad(&m, &xs, &ts, &w).unwrap();
        let big = argmax(&g.0.iter().map(|v| v.abs()).collect::<Vec<_>>());
        g.0[big] *= 2.0;
        let err = grad_check_against(&m, &xs, &ts, &w, &g).unwrap();
        assert!(err > 0.1, "{err}");
    }

    #[test]
    fn degenerate_grad_check() {
        let m = Model::zeros(Dims {
            input: 3,
            hidden: 4,
            classes: 3,
        });
        let xs = vec![vec![0.0; 3]; 2];
        let ts = vec![Target::Hard(0), Target::Hard(1)];
        let err = grad_check(&m, &xs, &ts, &[1.0, 1.0]).unwrap();
        assert!(err.is_finite() && err < 1e-4, "{err}");
    }

    #[test]
    fn parallel_gradient_is_bit_identical() {
        let m = init_model(6, 16, 4, 8).unwrap();
        let (xs, ts) = random_batch(8, 200, 6, 4);
        let w = vec![1.0; 200];
        let a = loss_and_grad_with(&m, &xs, &ts, &w, Execution::Sequential).unwrap();
        let b = loss_and_grad_with(&m, &xs, &ts, &w, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sgd_examples() {
        let dims = Dims {
            input: 1,
            hidden: 1,
            classes: 1,
        };
        let mut m = Model::from_params(dims, vec![1.0; 4], 0).unwrap();
        let mut v = Velocity::zeros(dims);
        sgd_step(&mut m, &mut v, &Gradient(vec![0.0; 4]), 0.1, 0.9, 0.0).unwrap();
        assert_eq!(m.params(), &[1.0; 4]);

        let mut v = Velocity::zeros(dims);
        sgd_step(&mut m, &mut v, &Gradient(vec![2.0; 4]), 0.1, 0.0, 0.0).unwrap();
        assert!(m.params().iter().all(|&p| (p - 0.8).abs() < 1e-15));
        assert_eq!(m.step(), 2);

        // Two momentum steps on a constant gradient.
        let mut m = Model::from_params(dims, vec![1.0; 4], 0).unwrap();
        let mut v = Velocity::zeros(dims);
        let g = Gradient(vec![0.5; 4]);
        sgd_step(&mut m, &mut v, &g, 0.1, 0.9, 0.0).unwrap();
        sgd_step(&mut m, &mut v, &g, 0.1, 0.9, 0.0).unwrap();
        let expect = 1.0 - 0.1 * (0.5 + (0.9 * 0.5 + 0.5));
        assert!(m.params().iter().all(|&p| (p - expect).abs() < 1e-15));
    }

    #[test]
    fn sgd_rejects_non_finite_gradient() {
        let dims = Dims {
            input: 1,
            hidden: 1,
            classes: 1,
        };
        let mut m = Model::from_params(dims, vec![1.0; 4], 0).unwrap();
        let before = m.clone();
        let mut v = Velocity(vec![0.3; 4]);
        let bad = Gradient(vec![0.0, f64::NAN, 0.0, 0.0]);
        assert!(sgd_step(&mut m, &mut v, &bad, 0.1, 0.9, 0.0).is_err());
        assert_eq!(m, before);
        assert_eq!(v.0, vec![0.3; 4]);
        assert!(sgd_step(&mut m, &mut v, &Gradient(vec![0.0; 4]), 0.0, 0.9, 0.0).is_err());
    }

    #[test]
    fn ema_examples() {
        let dims = Dims {
            input: 1,
            hidden: 1,
            classes: 1,
        };
        let ones = Model::from_params(dims, vec![1.0; 4], 0).unwrap();
        let zeros = Model::zeros(dims);
        let mut ema = EmaModel::new(&ones, 0.9).unwrap();
        ema_update(&mut ema, &zeros).unwrap();
        assert!(ema.model().params().iter().all(|&p| (p - 0.9).abs() < 1e-15));

        let mut ema = EmaModel::new(&ones, 0.0).unwrap();
        ema.update(&zeros).unwrap();
        assert_eq!(ema.model().params(), zeros.params());

        // |shadow_k - θ| = m^k |shadow_0 - θ|
        let target = Model::from_params(dims, vec![-2.0; 4], 0).unwrap();
        let mut ema = EmaModel::new(&ones, 0.8).unwrap();
        for k in 1..=20 {
            ema.update(&target).unwrap();
            let expect = 0.8f64.powi(k) * 3.0;
            let got = (ema.model().params()[0] + 2.0).abs();
            assert!((got - expect).abs() < 1e-12, "k={k}");
        }

        let other = Model::zeros(Dims {
            input: 2,
            hidden: 1,
            classes: 1,
        });
        assert!(ema.update(&other).is_err());
        assert!(EmaModel::new(&ones, 1.0).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut m = init_model(7, 9, 4, 21).unwrap();
        m.params_mut()[3] = 0.1 + 0.2;
        m.params_mut()[4] = 1e-310;
        let back = Model::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        assert!(
            Model::from_json("{\"dims\":{\"input\":1,\"hidden\":1,\"classes\":1},\"step\":0,\"params\":[0.0]}")
                .is_err()
        );
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(seed in any::<u64>(), x in proptest::collection::vec(-50.0f64..50.0, 4)) {
            let m = init_model(4, 8, 6, seed).unwrap();
            let p = m.predict_proba(&x).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn ema_stays_finite(seed in any::<u64>(), m in 0.0f64..0.9999, steps in 1usize..20) {
            let a = init_model(3, 4, 2, seed).unwrap();
            let b = init_model(3, 4, 2, seed.wrapping_add(1)).unwrap();
            let mut ema = EmaModel::new(&a, m).unwrap();
            for _ in 0..steps {
                ema.update(&b).unwrap();
            }
            prop_assert!(ema.model().is_finite());
        }
    }
}
