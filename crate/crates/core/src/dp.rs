//! Gradient clipping, Gaussian noise injection and noise-scale calibration.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParameterVector;

/// Parameters of the differentially private critic update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    /// Noise multiplier applied on top of `grad_sensitivity`.
    pub sigma_n: f64,
    /// L2 bound enforced on gradients before noise.
    pub clip_threshold: f64,
    /// Sensitivity `c_g` scaling the noise standard deviation.
    /// `None` means "same as `clip_threshold`".
    pub grad_sensitivity: Option<f64>,
    pub sample_rate: f64,
    pub n_d: u32,
    /// Critic weights are clamped to `[-weight_clip, weight_clip]`.
    pub weight_clip: f64,
}

impl Default for PrivacyParams {
    fn default() -> Self {
        PrivacyParams {
            epsilon: 0.5,
            delta: 1e-5,
            sigma_n: 1e-4,
            clip_threshold: 1.0,
            grad_sensitivity: None,
            sample_rate: 0.01,
            n_d: 5,
            weight_clip: 0.1,
        }
    }
}

impl PrivacyParams {
    pub fn validate(&self) -> Result<()> {
        match self.invalid_field() {
            Some((field, message)) => Err(Error::parameter(format!("{field} {message}"))),
            None => Ok(()),
        }
    }

    /// First field that violates its constraint, with the reason.
    pub fn invalid_field(&self) -> Option<(&'static str, &'static str)> {
        if !(self.epsilon > 0.0) {
            return Some(("epsilon", "must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Some(("delta", "must lie in (0, 1)"));
        }
        if !(self.sigma_n >= 0.0) || !self.sigma_n.is_finite() {
            return Some(("sigma_n", "must be non-negative"));
        }
        if !(self.clip_threshold > 0.0) {
            return Some(("clip_threshold", "must be positive"));
        }
        if !(self.sensitivity() > 0.0) {
            return Some(("grad_sensitivity", "must be positive"));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Some(("sample_rate", "must lie in (0, 1]"));
        }
        if self.n_d == 0 {
            return Some(("n_d", "must be at least 1"));
        }
        if !(self.weight_clip > 0.0) {
            return Some(("weight_clip", "must be positive"));
        }
        None
    }

    pub fn sensitivity(&self) -> f64 {
        self.grad_sensitivity.unwrap_or(self.clip_threshold)
    }
}

/// The factor `min(1, C / ||g||)`; a zero vector keeps factor 1.
pub fn clip_factor(norm: f64, clip: f64) -> f64 {
    if norm > clip {
        clip / norm
    } else {
        1.0
    }
}

/// Rescales `g` so that its L2 norm is at most `clip`.
pub fn clip_gradient(g: &ParameterVector, clip: f64) -> Result<ParameterVector> {
    if !(clip > 0.0) {
        return Err(Error::parameter(format!(
            "clip threshold must be positive, got {clip}"
        )));
    }
    let factor = clip_factor(g.l2_norm(), clip);
    if factor == 1.0 {
        return Ok(g.clone());
    }
    Ok(g.map(|v| v * factor))
}

/// Adds i.i.d. `N(0, (sigma_n * c_g)^2)` noise to every coordinate.
pub fn add_gaussian_noise<R: Rng + ?Sized>(
    g: &ParameterVector,
    sigma_n: f64,
    c_g: f64,
    rng: &mut R,
) -> Result<ParameterVector> {
    if !(sigma_n >= 0.0) || !sigma_n.is_finite() {
        return Err(Error::parameter(format!(
            "sigma_n must be non-negative, got {sigma_n}"
        )));
    }
    if !(c_g > 0.0) {
        return Err(Error::parameter(format!(
            "sensitivity must be positive, got {c_g}"
        )));
    }
    if sigma_n == 0.0 {
        return Ok(g.clone());
    }
    let normal = Normal::new(0.0, sigma_n * c_g)
        .map_err(|e| Error::parameter(format!("invalid noise scale: {e}")))?;
    let mut out = g.clone();
    for v in out.values_mut() {
        *v += normal.sample(rng);
    }
    Ok(out)
}

/// Lower bound `sqrt(2 ln(1.25/delta)) * sensitivity / epsilon` on the
/// Gaussian mechanism's standard deviation. Callers must pick a strictly
/// larger value.
pub fn calibrate_sigma(epsilon: f64, delta: f64, sensitivity: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !(delta > 0.0 && delta < 1.0) || !(sensitivity > 0.0) {
        return Err(Error::parameter(format!(
            "calibrate_sigma needs epsilon > 0, delta in (0,1), sensitivity > 0; got ({epsilon}, {delta}, {sensitivity})"
        )));
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt() * sensitivity / epsilon)
}

/// Noise multiplier `2 q sqrt(n_d ln(1/delta)) / epsilon` for DP critic
/// training with sample rate `q` and `n_d` critic iterations.
pub fn dpgan_noise_scale(q: f64, n_d: u32, delta: f64, epsilon: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) || n_d == 0 || !(delta > 0.0 && delta < 1.0) || !(epsilon > 0.0) {
        return Err(Error::parameter(format!(
            "dpgan_noise_scale needs q in (0,1], n_d >= 1, delta in (0,1), epsilon > 0; got ({q}, {n_d}, {delta}, {epsilon})"
        )));
    }
    Ok(2.0 * q * (f64::from(n_d) * (1.0 / delta).ln()).sqrt() / epsilon)
}

/// True iff `delta >= 0.8 exp(-(sigma epsilon)^2 / 2)` and `epsilon < 1`.
pub fn check_dp_condition(sigma: f64, epsilon: f64, delta: f64) -> bool {
    let se = sigma * epsilon;
    epsilon < 1.0 && delta >= 0.8 * (-(se * se) / 2.0).exp()
}

/// Clip to `clip_threshold`, then add noise with std `sigma_n * c_g`.
pub fn privatize_gradient<R: Rng + ?Sized>(
    g: &ParameterVector,
    p: &PrivacyParams,
    rng: &mut R,
) -> Result<ParameterVector> {
    p.validate()?;
    let clipped = clip_gradient(g, p.clip_threshold)?;
    add_gaussian_noise(&clipped, p.sigma_n, p.sensitivity(), rng)
}
