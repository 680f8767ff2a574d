//! Generator/critic pair trained with a differentially private critic.
//!
//! One call to [`client_update`] runs `n_g` generator iterations. Each one
//! first takes `n_d` critic steps whose mini-batch gradient is clipped to
//! `clip_threshold` and perturbed with Gaussian noise before the SGD update,
//! after which critic weights are clamped to `[-weight_clip, weight_clip]`.
//! The generator gradient is only clipped, never noised.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::ClientShard;
use crate::dp::{add_gaussian_noise, clip_factor, clip_gradient, PrivacyParams};
use crate::error::{Error, Result};
use crate::nn::{
    backward, forward, predict, sgd_step, Activation, Batch, LayerSpec, ModelSpec, ParameterVector,
};
use crate::tensor::{mean, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentPrior {
    /// `U[-1, 1]` per coordinate.
    Uniform,
    StandardNormal,
}

impl LatentPrior {
    pub fn sample<R: Rng + ?Sized>(self, n: usize, dim: usize, rng: &mut R) -> Matrix {
        let data = (0..n * dim)
            .map(|_| match self {
                LatentPrior::Uniform => rng.random_range(-1.0..=1.0),
                LatentPrior::StandardNormal => StandardNormal.sample(rng),
            })
            .collect();
        Matrix::from_vec(n, dim, data).expect("n * dim values")
    }
}

/// Granularity at which critic gradients are clipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// Clip the mean mini-batch gradient.
    #[default]
    PerBatch,
    /// Clip every example's gradient, then average.
    PerExample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub generator: ModelSpec,
    pub critic: ModelSpec,
    pub latent_dim: usize,
    pub latent_prior: LatentPrior,
    pub n_g: usize,
    pub n_d: usize,
    pub batch_m: usize,
    pub alpha: f64,
    pub privacy: PrivacyParams,
    pub clip_mode: ClipMode,
}

impl GanConfig {
    /// Generator `latent -> hidden -> data` with a sigmoid output and critic
    /// `data -> hidden -> 1`.
    pub fn mlp(
        data_dim: usize,
        latent_dim: usize,
        hidden: usize,
        privacy: PrivacyParams,
    ) -> Result<Self> {
        let generator = ModelSpec::new(vec![
            LayerSpec::dense(latent_dim, hidden, Activation::Relu),
            LayerSpec::dense(hidden, data_dim, Activation::Sigmoid),
        ])?;
        let critic = ModelSpec::new(vec![
            LayerSpec::dense(data_dim, hidden, Activation::Relu),
            LayerSpec::dense(hidden, 1, Activation::Identity),
        ])?;
        let cfg = GanConfig {
            generator,
            critic,
            latent_dim,
            latent_prior: LatentPrior::StandardNormal,
            n_g: 10,
            n_d: privacy.n_d as usize,
            batch_m: 10,
            alpha: 0.01,
            privacy,
            clip_mode: ClipMode::PerBatch,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn data_dim(&self) -> usize {
        self.generator.output_width()
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.critic.validate()?;
        if self.generator.input_width() != self.latent_dim {
            return Err(Error::structural(format!(
                "generator input {} differs from latent dimension {}",
                self.generator.input_width(),
                self.latent_dim
            )));
        }
        if self.generator.output_width() != self.critic.input_width() {
            return Err(Error::structural(format!(
                "generator emits {} features but critic reads {}",
                self.generator.output_width(),
                self.critic.input_width()
            )));
        }
        if self.critic.output_width() != 1 {
            return Err(Error::structural("critic must output a single score"));
        }
        if self.n_d == 0 || self.batch_m == 0 {
            return Err(Error::parameter("n_d and batch_m must be positive"));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::parameter("alpha must be non-negative"));
        }
        self.privacy.validate()
    }
}

/// Wasserstein critic surrogate `mean(fake) - mean(real)`.
pub fn critic_loss(real: &[f64], fake: &[f64]) -> Result<f64> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::parameter(
            "critic loss needs non-empty score vectors",
        ));
    }
    if real.len() != fake.len() {
        return Err(Error::parameter(
            "real and fake score vectors differ in length",
        ));
    }
    Ok(mean(fake) - mean(real))
}

/// `-mean(fake)`.
pub fn generator_loss(fake: &[f64]) -> Result<f64> {
    if fake.is_empty() {
        return Err(Error::parameter(
            "generator loss needs a non-empty score vector",
        ));
    }
    Ok(-mean(fake))
}

/// Log-loss of the original minimax game for a discriminator emitting
/// probabilities: `-mean(ln D(real)) - mean(ln(1 - D(fake)))`. Not used in
/// training.
pub fn minimax_discriminator_loss(real_prob: &[f64], fake_prob: &[f64]) -> Result<f64> {
    if real_prob.is_empty() || fake_prob.is_empty() {
        return Err(Error::parameter("minimax loss needs non-empty vectors"));
    }
    let bad = |p: &f64| !(0.0..=1.0).contains(p);
    if real_prob.iter().any(bad) || fake_prob.iter().any(bad) {
        return Err(Error::parameter(
            "discriminator outputs must be probabilities",
        ));
    }
    let real: Vec<f64> = real_prob.iter().map(|p| p.ln()).collect();
    let fake: Vec<f64> = fake_prob.iter().map(|p| (1.0 - p).ln()).collect();
    Ok(-mean(&real) - mean(&fake))
}

/// Clamps every coordinate into `[-c, c]`.
pub fn clip_weights(params: &ParameterVector, c: f64) -> Result<ParameterVector> {
    if !(c > 0.0) {
        return Err(Error::parameter(format!(
            "weight clip must be positive, got {c}"
        )));
    }
    Ok(params.map(|v| v.clamp(-c, c)))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GanStats {
    pub critic_losses: Vec<f64>,
    pub generator_losses: Vec<f64>,
    /// L2 norms of critic gradients before clipping.
    pub critic_grad_norms: Vec<f64>,
}

impl GanStats {
    pub fn mean_critic_loss(&self) -> f64 {
        if self.critic_losses.is_empty() {
            0.0
        } else {
            mean(&self.critic_losses)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientUpdateOutput {
    pub theta: ParameterVector,
    /// Critic after local training; stays with the client.
    pub omega: ParameterVector,
    pub stats: GanStats,
}

fn data_batch<R: Rng + ?Sized>(data: &Matrix, m: usize, rng: &mut R) -> Matrix {
    let n = data.rows();
    let idx: Vec<usize> = if m <= n {
        sample_indices(rng, n, m).into_vec()
    } else {
        (0..m).map(|_| rng.random_range(0..n)).collect()
    };
    data.select_rows(&idx)
}

fn filled(rows: usize, value: f64) -> Matrix {
    Matrix::from_vec(rows, 1, vec![value; rows]).expect("column vector")
}

/// Gradient of `mean(D(fake)) - mean(D(real))` with respect to the critic,
/// together with the loss value.
fn critic_gradient(
    cfg: &GanConfig,
    omega: &ParameterVector,
    real: &Matrix,
    fake: &Matrix,
) -> Result<(ParameterVector, f64)> {
    let m = real.rows() as f64;
    let real_trace = forward(&cfg.critic, omega, real)?;
    let fake_trace = forward(&cfg.critic, omega, fake)?;
    let loss = critic_loss(real_trace.output.as_slice(), fake_trace.output.as_slice())?;
    let mut grad = backward(
        &cfg.critic,
        omega,
        &real_trace,
        &filled(real.rows(), -1.0 / m),
    )?
    .params;
    let fake_grad = backward(
        &cfg.critic,
        omega,
        &fake_trace,
        &filled(fake.rows(), 1.0 / m),
    )?
    .params;
    grad.add_scaled(&fake_grad, 1.0)?;
    Ok((grad, loss))
}

/// Per-example variant: every example's gradient is clipped to `clip` before
/// averaging.
fn critic_gradient_per_example(
    cfg: &GanConfig,
    omega: &ParameterVector,
    real: &Matrix,
    fake: &Matrix,
    clip: f64,
) -> Result<(ParameterVector, f64)> {
    let m = real.rows();
    let mut sum = omega.zeros_like();
    let mut loss = 0.0;
    for i in 0..m {
        let (g, l) = critic_gradient(cfg, omega, &real.select_rows(&[i]), &fake.select_rows(&[i]))?;
        sum.add_scaled(&clip_gradient(&g, clip)?, 1.0 / m as f64)?;
        loss += l / m as f64;
    }
    Ok((sum, loss))
}

/// Local DP-WGAN training for one client. `omega` is the client's critic
/// from its previous participation (or the server's initial critic).
pub fn client_update<R: Rng + ?Sized>(
    theta: &ParameterVector,
    omega: &ParameterVector,
    shard: &ClientShard,
    cfg: &GanConfig,
    rng: &mut R,
) -> Result<ClientUpdateOutput> {
    cfg.validate()?;
    if shard.dataset.is_empty() {
        return Err(Error::data(format!(
            "client {} has an empty shard",
            shard.client_id
        )));
    }
    if shard.dataset.dim() != cfg.data_dim() {
        return Err(Error::structural(format!(
            "shard has {} features, generator emits {}",
            shard.dataset.dim(),
            cfg.data_dim()
        )));
    }
    theta.ensure_matches(&cfg.generator)?;
    omega.ensure_matches(&cfg.critic)?;

    let privacy = &cfg.privacy;
    let data = shard.dataset.samples();
    let m = cfg.batch_m;
    let mut theta = theta.clone();
    let mut omega = omega.clone();
    let mut stats = GanStats::default();

    for _ in 0..cfg.n_g {
        for _ in 0..cfg.n_d {
            let z = cfg.latent_prior.sample(m, cfg.latent_dim, rng);
            let real = data_batch(data, m, rng);
            let fake = predict(&cfg.generator, &theta, &z)?;
            let (clipped, loss) = match cfg.clip_mode {
                ClipMode::PerBatch => {
                    let (g, loss) = critic_gradient(cfg, &omega, &real, &fake)?;
                    stats.critic_grad_norms.push(g.l2_norm());
                    (clip_gradient(&g, privacy.clip_threshold)?, loss)
                }
                ClipMode::PerExample => {
                    let (g, loss) = critic_gradient_per_example(
                        cfg,
                        &omega,
                        &real,
                        &fake,
                        privacy.clip_threshold,
                    )?;
                    stats.critic_grad_norms.push(g.l2_norm());
                    (g, loss)
                }
            };
            let noisy = add_gaussian_noise(&clipped, privacy.sigma_n, privacy.sensitivity(), rng)?;
            omega = clip_weights(&sgd_step(&omega, &noisy, cfg.alpha)?, privacy.weight_clip)?;
            debug_assert!(omega.max_abs() <= privacy.weight_clip);
            stats.critic_losses.push(loss);
        }

        let z = cfg.latent_prior.sample(m, cfg.latent_dim, rng);
        let gen_trace = forward(&cfg.generator, &theta, &z)?;
        let critic_trace = forward(&cfg.critic, &omega, &gen_trace.output)?;
        stats
            .generator_losses
            .push(generator_loss(critic_trace.output.as_slice())?);
        let through_critic = backward(
            &cfg.critic,
            &omega,
            &critic_trace,
            &filled(m, -1.0 / m as f64),
        )?;
        let mut g_theta =
            backward(&cfg.generator, &theta, &gen_trace, &through_critic.input)?.params;
        let factor = clip_factor(g_theta.l2_norm(), privacy.clip_threshold);
        if factor != 1.0 {
            g_theta = g_theta.map(|v| v * factor);
        }
        theta = sgd_step(&theta, &g_theta, cfg.alpha)?;
    }

    Ok(ClientUpdateOutput {
        theta,
        omega,
        stats,
    })
}

/// `n` generator outputs on fresh latent draws.
pub fn sample_generator<R: Rng + ?Sized>(
    theta: &ParameterVector,
    cfg: &GanConfig,
    n: usize,
    rng: &mut R,
) -> Result<Batch> {
    if n == 0 {
        return Err(Error::parameter("sample count must be at least 1"));
    }
    let z = cfg.latent_prior.sample(n, cfg.latent_dim, rng);
    Batch::new(predict(&cfg.generator, theta, &z)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, LabeledDataset};
    use crate::nn::init_params;
    use crate::rng::rng_from_seed;

    fn small_cfg(sigma_n: f64) -> GanConfig {
        let privacy = PrivacyParams {
            sigma_n,
            weight_clip: 0.05,
            ..PrivacyParams::default()
        };
        let mut cfg = GanConfig::mlp(16, 4, 8, privacy).unwrap();
        cfg.n_g = 3;
        cfg.n_d = 2;
        cfg.batch_m = 4;
        cfg
    }

    fn shard() -> ClientShard {
        ClientShard {
            client_id: 0,
            dataset: synth_dataset([5, 5, 5], 16, 1).unwrap(),
        }
    }

    #[test]
    fn loss_values() {
        assert_eq!(critic_loss(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), -1.0);
        assert_eq!(critic_loss(&[0.3, 0.2], &[0.3, 0.2]).unwrap(), 0.0);
        assert_eq!(critic_loss(&[2.0, 4.0], &[1.0, 1.0]).unwrap(), -2.0);
        assert!(critic_loss(&[], &[]).is_err());
        assert_eq!(generator_loss(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(generator_loss(&[1.0, 3.0]).unwrap(), -2.0);
        let k = 0.75;
        let base = generator_loss(&[0.1, 0.4]).unwrap();
        assert!((generator_loss(&[0.1 + k, 0.4 + k]).unwrap() - (base - k)).abs() < 1e-15);
        assert!(generator_loss(&[]).is_err());
    }

    #[test]
    fn minimax_loss_at_chance() {
        let l = minimax_discriminator_loss(&[0.5], &[0.5]).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!(minimax_discriminator_loss(&[1.5], &[0.5]).is_err());
    }

    #[test]
    fn weight_clip_cases() {
        let p = ParameterVector::from_values(vec![-5.0, 0.01, 5.0]);
        assert_eq!(clip_weights(&p, 0.1).unwrap().values(), &[-0.1, 0.01, 0.1]);
        let inside = ParameterVector::from_values(vec![0.05, -0.02]);
        assert_eq!(clip_weights(&inside, 0.1).unwrap(), inside);
        let once = clip_weights(&p, 0.1).unwrap();
        assert_eq!(clip_weights(&once, 0.1).unwrap(), once);
        assert!(clip_weights(&p, 0.0).is_err());
    }

    #[test]
    fn zero_generator_iterations_keep_theta() {
        let mut cfg = small_cfg(1e-4);
        cfg.n_g = 0;
        let theta = init_params(&cfg.generator, 1).unwrap();
        let omega = init_params(&cfg.critic, 2).unwrap();
        let out = client_update(&theta, &omega, &shard(), &cfg, &mut rng_from_seed(0)).unwrap();
        assert_eq!(out.theta.to_bytes(), theta.to_bytes());
    }

    #[test]
    fn client_update_is_deterministic_and_clips() {
        let cfg = small_cfg(1.0);
        let theta = init_params(&cfg.generator, 1).unwrap();
        let omega = init_params(&cfg.critic, 2).unwrap();
        let a = client_update(&theta, &omega, &shard(), &cfg, &mut rng_from_seed(5)).unwrap();
        let b = client_update(&theta, &omega, &shard(), &cfg, &mut rng_from_seed(5)).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.omega, b.omega);
        assert_ne!(a.theta, theta);
        assert!(a.omega.max_abs() <= 0.05);
        assert_eq!(a.stats.critic_losses.len(), 6);
        assert_eq!(a.stats.generator_losses.len(), 3);
    }

    #[test]
    fn per_example_mode_runs_and_clips() {
        let mut cfg = small_cfg(0.1);
        cfg.clip_mode = ClipMode::PerExample;
        let theta = init_params(&cfg.generator, 1).unwrap();
        let omega = init_params(&cfg.critic, 2).unwrap();
        let out = client_update(&theta, &omega, &shard(), &cfg, &mut rng_from_seed(5)).unwrap();
        assert!(out.omega.max_abs() <= 0.05);
    }

    #[test]
    fn empty_shard_rejected() {
        let cfg = small_cfg(0.0);
        let theta = init_params(&cfg.generator, 1).unwrap();
        let omega = init_params(&cfg.critic, 2).unwrap();
        let empty = ClientShard {
            client_id: 3,
            dataset: LabeledDataset::empty(16),
        };
        assert!(matches!(
            client_update(&theta, &omega, &empty, &cfg, &mut rng_from_seed(0)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn sampling_cases() {
        let cfg = small_cfg(0.0);
        let theta = init_params(&cfg.generator, 4).unwrap();
        let a = sample_generator(&theta, &cfg, 6, &mut rng_from_seed(1)).unwrap();
        let b = sample_generator(&theta, &cfg, 6, &mut rng_from_seed(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.m(), 6);
        assert!(sample_generator(&theta, &cfg, 0, &mut rng_from_seed(1)).is_err());

        let mut linear = cfg.clone();
        linear.generator =
            ModelSpec::new(vec![LayerSpec::dense(4, 16, Activation::Identity)]).unwrap();
        let zero = ParameterVector::zeros(&linear.generator);
        let s = sample_generator(&zero, &linear, 3, &mut rng_from_seed(1)).unwrap();
        assert!(s.inputs.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg(0.0);
        cfg.latent_dim = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg(0.0);
        cfg.critic = ModelSpec::new(vec![LayerSpec::dense(8, 1, Activation::Identity)]).unwrap();
        assert!(cfg.validate().is_err());
    }
}
