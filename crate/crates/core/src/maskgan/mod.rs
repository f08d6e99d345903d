//! Per-class noise-to-mask GANs trained with label smoothing and random
//! label flipping on the discriminator side.

mod net;
mod train;


pub use net::{NoiseGenConfig, NoiseGenerator};
pub use train::{
    gan_d_loss_and_grads, gan_g_loss_and_grads, generate_map, generate_mask, train_maskgan, train_maskgan_traced,
    train_noise_gan, GanEpochLog, LabeledMask, MaskGanCheckpoint, NoiseGanRun, NoiseGanTrainer, StabilizerTrace,
    G_TARGET,
};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cgan::{Norm, PatchConfig};
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::loss::bce;
use crate::nn::AdamConfig;
use crate::rng::{self, Rng};

/// Range of smoothed targets for real samples.
pub const REAL_RANGE: [f64; 2] = [0.9, 1.0];
/// Range of smoothed targets for generated samples.
pub const FAKE_RANGE: [f64; 2] = [0.0, 0.1];

/// Standard-normal latent vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSeed(Vec<f64>);

impl LatentSeed {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Param("latent dimension must be >= 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param("latent values must be finite".into()));
        }
        Ok(Self(values))
    }

    /// Latent number `index` of the stream rooted at `master_seed`.
    pub fn derive(master_seed: u64, index: u64, dim: usize) -> Result<Self> {
        sample_latent(dim, &mut rng::derive(master_seed, "latent", index))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `d` independent standard-normal draws from `rng`.
pub fn sample_latent(d: usize, rng: &mut Rng) -> Result<LatentSeed> {
    if d == 0 {
        return Err(Error::Param("latent dimension must be >= 1".into()));
    }
    LatentSeed::new((0..d).map(|_| rng.sample(StandardNormal)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskGanConfig {
    pub latent_dim: usize,
    pub image_size: usize,
    pub base_grid: usize,
    pub gen_channels: usize,
    pub gen_norm: Norm,
    pub disc_channels: usize,
    /// Stride-2 layers of the patch discriminator.
    pub disc_layers: usize,
    pub disc_norm: Norm,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub real_range: [f64; 2],
    pub fake_range: [f64; 2],
    pub flip_probability: f64,
    /// Generator outputs at or above this become foreground.
    pub threshold: f64,
    pub adam: AdamConfig,
    /// Discriminator step size relative to `adam.lr`.
    pub disc_lr_scale: f64,
    pub seed: u64,
    pub class_label: ClassLabel,
}

impl Default for MaskGanConfig {
    fn default() -> Self {
        Self {
            latent_dim: 128,
            image_size: 256,
            base_grid: 4,
            gen_channels: 128,
            gen_norm: Norm::None,
            disc_channels: 16,
            disc_layers: 3,
            disc_norm: Norm::Instance,
            max_epochs: 1600,
            batch_size: 8,
            real_range: REAL_RANGE,
            fake_range: FAKE_RANGE,
            flip_probability: 0.05,
            threshold: 0.5,
            adam: AdamConfig::default(),
            disc_lr_scale: 1.0,
            seed: 0,
            class_label: ClassLabel::Benign,
        }
    }
}

impl MaskGanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let [rl, rh] = self.real_range;
        let [fl, fh] = self.fake_range;
        if !(0.5 <= rl && rl <= rh && rh <= 1.0) {
            return bad(format!(
                "real target range {:?} must lie within [0.5, 1]",
                self.real_range
            ));
        }
        if !(0.0 <= fl && fl <= fh && fh < 0.5) {
            return bad(format!(
                "fake target range {:?} must lie within [0, 0.5)",
                self.fake_range
            ));
        }
        if !(0.0..0.5).contains(&self.flip_probability) {
            return bad(format!(
                "flip_probability {} must be in [0, 0.5)",
                self.flip_probability
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} must be in (0, 1)", self.threshold));
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.latent_dim == 0 {
            return bad("max_epochs, batch_size and latent_dim must be >= 1".into());
        }
        if !(self.adam.lr > 0.0 && self.disc_lr_scale > 0.0) {
            return bad("learning rates must be positive".into());
        }
        Ok(())
    }

    pub fn generator_config(&self, out_channels: usize) -> NoiseGenConfig {
        NoiseGenConfig {
            latent_dim: self.latent_dim,
            image_size: self.image_size,
            base_grid: self.base_grid,
            channels: self.gen_channels,
            out_channels,
            norm: self.gen_norm,
        }
    }

    pub fn disc_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.adam.lr * self.disc_lr_scale,
            ..self.adam
        }
    }

    pub fn discriminator_config(&self, in_channels: usize) -> PatchConfig {
        PatchConfig {
            in_channels,
            image_size: self.image_size,
            base_channels: self.disc_channels,
            layers: self.disc_layers,
            norm: self.disc_norm,
        }
    }
}

/// Uniform draw from `range` (inclusive).
pub fn smooth_label_in(range: [f64; 2], rng: &mut Rng) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

/// Smoothed discriminator target: uniform in `[0.9, 1]` for real, `[0, 0.1]` for fake.
pub fn smooth_labels(is_real: bool, rng: &mut Rng) -> f64 {
    smooth_label_in(if is_real { REAL_RANGE } else { FAKE_RANGE }, rng)
}

/// One Bernoulli(`p`) draw deciding whether a batch's targets are swapped.
pub fn flip_event(p: f64, rng: &mut Rng) -> bool {
    p > 0.0 && rng.random_bool(p)
}

/// With probability `p` returns the targets swapped.
pub fn maybe_flip(real_target: f64, fake_target: f64, p: f64, rng: &mut Rng) -> (f64, f64) {
    if flip_event(p, rng) {
        (fake_target, real_target)
    } else {
        (real_target, fake_target)
    }
}

/// BCE of real scores against `real_target` plus fake scores against `fake_target`.
pub fn gan_d_loss(d_real: &[f64], d_fake: &[f64], real_target: f64, fake_target: f64) -> Result<f64> {
    Ok(bce(d_real, real_target)? + bce(d_fake, fake_target)?)
}

/// `mean(-ln d_fake)`.
pub fn gan_g_loss(d_fake: &[f64]) -> Result<f64> {
    bce(d_fake, 1.0)
}
