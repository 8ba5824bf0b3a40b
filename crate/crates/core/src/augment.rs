//! Weak and strong stochastic views of feature vectors.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    Weak,
    Strong,
}

/// Noise scales for weak/strong views plus the strong-view masking rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    pub weak_sigma: f64,
    pub strong_sigma: f64,
    pub mask_rate: f64,
}

impl AugmentPolicy {
    pub fn new(weak_sigma: f64, strong_sigma: f64, mask_rate: f64) -> Result<Self> {
        let p = AugmentPolicy {
            weak_sigma,
            strong_sigma,
            mask_rate,
        };
        p.validate()?;
        Ok(p)
    }

    /// Defaults relative to the generator noise: weak 0.1σ, strong 0.5σ,
    /// mask rate 0.2.
    pub fn for_noise(noise_sigma: f64) -> Self {
        AugmentPolicy {
            weak_sigma: 0.1 * noise_sigma,
            strong_sigma: 0.5 * noise_sigma,
            mask_rate: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weak_sigma >= 0.0) || !(self.strong_sigma >= self.weak_sigma) || !self.strong_sigma.is_finite() {
            return Err(Error::invalid(format!(
                "augment policy needs strong_sigma >= weak_sigma >= 0, got weak={} strong={}",
                self.weak_sigma, self.strong_sigma
            )));
        }
        if !(0.0..1.0).contains(&self.mask_rate) {
            return Err(Error::invalid(format!(
                "mask_rate must be in [0,1), got {}",
                self.mask_rate
            )));
        }
        Ok(())
    }

    pub fn apply<R: RngCore + ?Sized>(&self, kind: AugmentKind, x: &[f64], rng: &mut R) -> Vec<f64> {
        match kind {
            AugmentKind::Weak => weak_augment(x, self, rng),
            AugmentKind::Strong => strong_augment(x, self, rng),
        }
    }
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy::for_noise(1.0)
    }
}

fn add_noise<R: RngCore + ?Sized>(x: &mut [f64], sigma: f64, rng: &mut R) {
    // A zero scale draws nothing from the stream.
    if sigma == 0.0 {
        return;
    }
    for v in x {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
}

/// `x + ε`, `ε ~ N(0, weak_sigma² I)`.
pub fn weak_augment<R: RngCore + ?Sized>(x: &[f64], policy: &AugmentPolicy, rng: &mut R) -> Vec<f64> {
    let mut out = x.to_vec();
    add_noise(&mut out, policy.weak_sigma, rng);
    out
}

/// Gaussian noise at `strong_sigma`, then each coordinate is zeroed
/// independently with probability `mask_rate`.
pub fn strong_augment<R: RngCore + ?Sized>(x: &[f64], policy: &AugmentPolicy, rng: &mut R) -> Vec<f64> {
    let mut out = x.to_vec();
    add_noise(&mut out, policy.strong_sigma, rng);
    if policy.mask_rate > 0.0 {
        for v in &mut out {
            if rng.random::<f64>() < policy.mask_rate {
                *v = 0.0;
            }
        }
    }
    out
}
