//! Distribution alignment with a temperature-scaled target and the
//! per-generation temperature schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to the running marginal before dividing by it.
pub const MARGINAL_FLOOR: f64 = 1e-6;

pub const DEFAULT_MARGINAL_DECAY: f64 = 0.99;

const SIMPLEX_TOL: f64 = 1e-6;

pub(crate) fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid(format!("{what} is empty")));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

/// `Normalize(p^t)`; `t = 1` returns `p` unchanged and `t = 0` is uniform.
pub fn scaled_target(p: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("temperature must be in [0,1], got {t}")));
    }
    check_distribution(p, "class distribution")?;
    if t == 1.0 {
        return Ok(p.to_vec());
    }
    let mut out: Vec<f64> = p.iter().map(|v| v.powf(t)).collect();
    normalize(&mut out);
    Ok(out)
}

/// Linear interpolation from 1.0 at generation 0 to `t_min` at generation
/// `last`.
pub fn temperature_schedule(generation: usize, last: usize, t_min: f64) -> Result<f64> {
    if last == 0 {
        return Err(Error::invalid("schedule needs a final generation index >= 1"));
    }
    if generation > last {
        return Err(Error::invalid(format!(
            "generation {generation} is past the final generation {last}"
        )));
    }
    if !(0.0..=1.0).contains(&t_min) {
        return Err(Error::invalid(format!("t_min must be in [0,1], got {t_min}")));
    }
    let frac = generation as f64 / last as f64;
    Ok((1.0 - frac) * 1.0 + frac * t_min)
}

/// Running average of the model's (unaligned) predictive distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalState {
    probs: Vec<f64>,
    decay: f64,
    updates: u64,
}

impl MarginalState {
    pub fn uniform(num_classes: usize, decay: f64) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("marginal needs at least one class"));
        }
        MarginalState::from_probs(vec![1.0 / num_classes as f64; num_classes], decay)
    }

    pub fn from_probs(probs: Vec<f64>, decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::invalid(format!("marginal decay must be in [0,1), got {decay}")));
        }
        check_distribution(&probs, "marginal")?;
        let mut state = MarginalState {
            probs,
            decay,
            updates: 0,
        };
        state.clamp();
        Ok(state)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn clamp(&mut self) {
        if self.probs.iter().any(|&p| p < MARGINAL_FLOOR) {
            self.probs.iter_mut().for_each(|p| *p = p.max(MARGINAL_FLOOR));
            normalize(&mut self.probs);
        }
    }

    /// `p̃ <- m p̃ + (1-m) batch`, then clamp to the floor and renormalize.
    pub fn update(&mut self, batch_mean: &[f64]) -> Result<()> {
        if batch_mean.len() != self.probs.len() {
            return Err(Error::DimensionMismatch {
                expected: self.probs.len(),
                actual: batch_mean.len(),
            });
        }
        check_distribution(batch_mean, "batch mean prediction")?;
        let m = self.decay;
        for (p, &b) in self.probs.iter_mut().zip(batch_mean) {
            *p = m * *p + (1.0 - m) * b;
        }
        self.clamp();
        self.updates += 1;
        Ok(())
    }
}

pub fn update_marginal(state: &mut MarginalState, batch_mean: &[f64]) -> Result<()> {
    state.update(batch_mean)
}

/// Labeled-set class distribution together with its temperature-scaled form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetDistribution {
    base: Vec<f64>,
    temperature: f64,
    target: Vec<f64>,
}

impl TargetDistribution {
    pub fn new(base: Vec<f64>, temperature: f64) -> Result<Self> {
        let target = scaled_target(&base, temperature)?;
        Ok(TargetDistribution {
            base,
            temperature,
            target,
        })
    }

    /// Uses `target` verbatim, bypassing temperature scaling.
    pub fn fixed(target: Vec<f64>) -> Result<Self> {
        check_distribution(&target, "target")?;
        Ok(TargetDistribution {
            base: target.clone(),
            temperature: 1.0,
            target,
        })
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }
}

/// `q̃ = Normalize(q · target / p̃)`.
pub fn align(q: &[f64], target: &TargetDistribution, state: &MarginalState) -> Vec<f64> {
    let mut out: Vec<f64> = q
        .iter()
        .zip(target.target())
        .zip(state.probs())
        .map(|((&qi, &ti), &pi)| qi * ti / pi.max(MARGINAL_FLOOR))
        .collect();
    let s: f64 = out.iter().sum();
    if s > 0.0 && s.is_finite() {
        out.iter_mut().for_each(|x| *x /= s);
        out
    } else {
        // Only reachable when q puts all its mass on zero-target classes.
        q.to_vec()
    }
}
