//! Mask-to-image conditional GAN: U-Net generator, patch discriminator,
//! adversarial plus weighted-MSE objective.

mod net;
mod train;


pub use net::{Norm, PatchConfig, PatchDiscriminator, UNetConfig, UNetGenerator};
pub use train::{
    cgan_generate, d_loss_and_grads, g_loss_and_grads, train_cgan, CganCheckpoint, CganEpochLog, CganTrainer, GLoss,
    CRITERION_KIND,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::bce;
use crate::nn::AdamConfig;
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CganConfig {
    pub image_size: usize,
    /// Number of stride-2 encoder stages.
    pub depth: usize,
    pub gen_channels: usize,
    pub max_channels: usize,
    pub disc_channels: usize,
    pub disc_layers: usize,
    pub norm: Norm,
    pub lambda_mse: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for CganConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            depth: 6,
            gen_channels: 64,
            max_channels: 512,
            disc_channels: 64,
            disc_layers: 3,
            norm: Norm::Instance,
            lambda_mse: 100.0,
            max_epochs: 200,
            batch_size: 1,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl CganConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_mse >= 0.0 && self.lambda_mse.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_mse must be >= 0, got {}",
                self.lambda_mse
            )));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("max_epochs and batch_size must be >= 1".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        self.generator_config().validate()
    }

    pub fn generator_config(&self) -> UNetConfig {
        UNetConfig {
            in_channels: 1,
            out_channels: 3,
            image_size: self.image_size,
            depth: self.depth,
            base_channels: self.gen_channels,
            max_channels: self.max_channels,
            norm: self.norm,
        }
    }

    pub fn discriminator_config(&self) -> PatchConfig {
        PatchConfig {
            in_channels: 4,
            image_size: self.image_size,
            base_channels: self.disc_channels,
            layers: self.disc_layers,
            norm: self.norm,
        }
    }

    fn init_rng(&self, which: &str) -> Rng {
        rng::derive(self.seed, which, 0)
    }
}

pub fn build_cgan_generator(cfg: &CganConfig) -> Result<UNetGenerator> {
    cfg.validate()?;
    UNetGenerator::new(cfg.generator_config(), &mut cfg.init_rng("cgan-init-generator"))
}

pub fn build_patch_discriminator(cfg: &CganConfig) -> Result<PatchDiscriminator> {
    cfg.validate()?;
    PatchDiscriminator::new(cfg.discriminator_config(), &mut cfg.init_rng("cgan-init-discriminator"))
}

/// Cell-averaged BCE of real scores against 1 plus fake scores against 0.
pub fn cgan_d_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    Ok(bce(d_real, 1.0)? + bce(d_fake, 0.0)?)
}

/// `mean(-ln d_fake) + lambda * mse(generated, target)`.
pub fn cgan_g_loss(d_fake: &[f64], generated: &[f64], target: &[f64], lambda_mse: f64) -> Result<f64> {
    if generated.len() != target.len() || generated.is_empty() {
        return Err(Error::Param(format!(
            "generated has {} values, target {}",
            generated.len(),
            target.len()
        )));
    }
    Ok(bce(d_fake, 1.0)? + lambda_mse * mse(generated, target))
}

pub(crate) fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}
