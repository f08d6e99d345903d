use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{build_cgan_generator, build_patch_discriminator, mse, CganConfig, PatchDiscriminator, UNetGenerator};
use crate::checkpoint;
use crate::convert::{mask_to_tensor, rgb_to_tensor, tensor_to_rgb};
use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, RgbImage};
use crate::loss::bce_with_logits;
use crate::nn::{Adam, Graph, Network, ParamSet, Tensor};
use crate::rng;

/// What the stored criterion measures.
pub const CRITERION_KIND: &str = "lambda_weighted_validation_mse";

const VAL_CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GLoss {
    pub total: f64,
    pub adversarial: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CganEpochLog {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub g_adversarial: f64,
    pub train_mse: f64,
    pub val_mse: f64,
    pub criterion: f64,
    pub best_criterion: f64,
}

/// Generator, discriminator and their optimisers. Each step touches exactly
/// one network's parameters.
#[derive(Clone, Debug)]
pub struct CganTrainer {
    cfg: CganConfig,
    gen: UNetGenerator,
    disc: PatchDiscriminator,
    g_opt: Adam,
    d_opt: Adam,
}

impl CganTrainer {
    pub fn new(cfg: &CganConfig) -> Result<Self> {
        let gen = build_cgan_generator(cfg)?;
        let disc = build_patch_discriminator(cfg)?;
        Ok(Self {
            g_opt: Adam::new(cfg.adam, gen.params()),
            d_opt: Adam::new(cfg.adam, disc.params()),
            cfg: cfg.clone(),
            gen,
            disc,
        })
    }

    pub fn generator(&self) -> &UNetGenerator {
        &self.gen
    }

    pub fn discriminator(&self) -> &PatchDiscriminator {
        &self.disc
    }

    /// One discriminator update on a batch (`masks [n,1,s,s]`, `images [n,3,s,s]`)
    /// with the generator frozen. Returns the discriminator loss.
    pub fn d_step(&mut self, masks: &Tensor, images: &Tensor) -> f64 {
        let fake = self.gen.infer(masks.clone());
        let (loss, grads) = d_loss_and_grads(&self.disc, masks, images, &fake);
        self.d_opt.step(self.disc.params_mut(), &grads);
        loss
    }

    /// One generator update with the discriminator frozen.
    pub fn g_step(&mut self, masks: &Tensor, images: &Tensor) -> GLoss {
        let (loss, grads) = g_loss_and_grads(&self.gen, &self.disc, masks, images, self.cfg.lambda_mse);
        self.g_opt.step(self.gen.params_mut(), &grads);
        loss
    }

    /// Mean reconstruction MSE of the current generator over `pairs`.
    pub fn reconstruction_mse(&self, masks: &[Tensor], images: &[Tensor]) -> Result<f64> {
        reconstruction_mse(&self.gen, masks, images)
    }
}

/// Discriminator loss and its parameter gradients for a given fake batch.
pub fn d_loss_and_grads(
    disc: &PatchDiscriminator,
    masks: &Tensor,
    images: &Tensor,
    fake: &Tensor,
) -> (f64, Vec<Option<Tensor>>) {
    let mut g = Graph::train();
    let p = g.bind(disc.params());
    let m = g.input(masks.clone());
    let real = g.input(images.clone());
    let fake = g.input(fake.clone());
    let xr = g.concat(&[m, real]);
    let xf = g.concat(&[m, fake]);
    let lr = disc.logits(&mut g, &p, xr);
    let lf = disc.logits(&mut g, &p, xf);
    let (a, ga) = bce_with_logits(g.value(lr).data(), 1.0);
    let (b, gb) = bce_with_logits(g.value(lf).data(), 0.0);
    let seeds = [
        (lr, Tensor::from_vec(g.value(lr).shape(), ga).expect("seed shape")),
        (lf, Tensor::from_vec(g.value(lf).shape(), gb).expect("seed shape")),
    ];
    let mut grads = g.backward(&seeds);
    (a + b, grads.take_params(&p))
}

/// Generator loss and generator parameter gradients; the discriminator is
/// bound frozen so no gradient is formed for it.
pub fn g_loss_and_grads(
    gen: &UNetGenerator,
    disc: &PatchDiscriminator,
    masks: &Tensor,
    images: &Tensor,
    lambda_mse: f64,
) -> (GLoss, Vec<Option<Tensor>>) {
    let mut g = Graph::train();
    let pg = g.bind(gen.params());
    let pd = g.bind_frozen(disc.params());
    let m = g.input(masks.clone());
    let fake = gen.forward(&mut g, &pg, m);
    let x = g.concat(&[m, fake]);
    let l = disc.logits(&mut g, &pd, x);
    let (adv, gadv) = bce_with_logits(g.value(l).data(), 1.0);
    let fv = g.value(fake);
    let n = fv.len() as f64;
    let err = mse(fv.data(), images.data());
    let gm: Vec<f64> = fv
        .data()
        .iter()
        .zip(images.data())
        .map(|(f, t)| 2.0 * lambda_mse * (f - t) / n)
        .collect();
    let seeds = [
        (l, Tensor::from_vec(g.value(l).shape(), gadv).expect("seed shape")),
        (fake, Tensor::from_vec(fv.shape(), gm).expect("seed shape")),
    ];
    let mut grads = g.backward(&seeds);
    let loss = GLoss {
        total: adv + lambda_mse * err,
        adversarial: adv,
        mse: err,
    };
    (loss, grads.take_params(&pg))
}

fn reconstruction_mse(gen: &UNetGenerator, masks: &[Tensor], images: &[Tensor]) -> Result<f64> {
    let mut total = 0.0;
    for (m, x) in masks.chunks(VAL_CHUNK).zip(images.chunks(VAL_CHUNK)) {
        let out = gen.infer(Tensor::stack(m)?);
        let tgt = Tensor::stack(x)?;
        total += mse(out.data(), tgt.data()) * m.len() as f64;
    }
    Ok(total / masks.len() as f64)
}

fn pair_tensors(pairs: &[(BinaryMask, RgbImage)], size: usize, what: &str) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    if pairs.is_empty() {
        return Err(Error::Param(format!("no {what} pairs")));
    }
    let mut masks = Vec::with_capacity(pairs.len());
    let mut images = Vec::with_capacity(pairs.len());
    for (i, (m, x)) in pairs.iter().enumerate() {
        if m.height() != size || m.width() != size || x.height() != size || x.width() != size {
            return Err(Error::Shape(format!(
                "{what} pair {i}: mask {}x{}, image {}x{}, expected {size}x{size}",
                m.height(),
                m.width(),
                x.height(),
                x.width()
            )));
        }
        masks.push(mask_to_tensor(m));
        images.push(rgb_to_tensor(x));
    }
    Ok((masks, images))
}

/// Alternating D/G training. After every epoch the λ-weighted validation MSE
/// is computed and the networks with the lowest value so far are kept.
pub fn train_cgan(
    pairs: &[(BinaryMask, RgbImage)],
    val_pairs: &[(BinaryMask, RgbImage)],
    cfg: &CganConfig,
) -> Result<CganCheckpoint> {
    cfg.validate()?;
    let (masks, images) = pair_tensors(pairs, cfg.image_size, "training")?;
    let (val_masks, val_images) = pair_tensors(val_pairs, cfg.image_size, "validation")?;
    let mut trainer = CganTrainer::new(cfg)?;
    let mut best: Option<(usize, f64, ParamSet, ParamSet)> = None;
    let mut log = Vec::with_capacity(cfg.max_epochs);
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    for epoch in 0..cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::derive(cfg.seed, "cgan-shuffle", epoch as u64));
        let (mut d_sum, mut g_sum, mut adv_sum, mut mse_sum) = (0.0, 0.0, 0.0, 0.0);
        let batches = order.chunks(cfg.batch_size).count();
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let m = Tensor::stack(&idx.iter().map(|i| masks[*i].clone()).collect::<Vec<_>>())?;
            let x = Tensor::stack(&idx.iter().map(|i| images[*i].clone()).collect::<Vec<_>>())?;
            let d = trainer.d_step(&m, &x);
            if !d.is_finite() {
                return Err(Error::NonFinite {
                    what: "discriminator",
                    epoch,
                    batch: b,
                });
            }
            let gl = trainer.g_step(&m, &x);
            if !gl.total.is_finite() {
                return Err(Error::NonFinite {
                    what: "generator",
                    epoch,
                    batch: b,
                });
            }
            d_sum += d;
            g_sum += gl.total;
            adv_sum += gl.adversarial;
            mse_sum += gl.mse;
        }
        let val_mse = trainer.reconstruction_mse(&val_masks, &val_images)?;
        let criterion = cfg.lambda_mse * val_mse;
        if !criterion.is_finite() {
            return Err(Error::NonFinite {
                what: "validation",
                epoch,
                batch: 0,
            });
        }
        if best.as_ref().is_none_or(|b| criterion < b.1) {
            best = Some((
                epoch,
                criterion,
                trainer.gen.params().clone(),
                trainer.disc.params().clone(),
            ));
        }
        let nb = batches as f64;
        let entry = CganEpochLog {
            epoch,
            d_loss: d_sum / nb,
            g_loss: g_sum / nb,
            g_adversarial: adv_sum / nb,
            train_mse: mse_sum / nb,
            val_mse,
            criterion,
            best_criterion: best.as_ref().map_or(criterion, |b| b.1),
        };
        log::debug!(
            "cgan epoch {epoch}: d {:.4} g {:.4} val_mse {:.5}",
            entry.d_loss,
            entry.g_loss,
            entry.val_mse
        );
        if (epoch + 1) % 10 == 0 || epoch + 1 == cfg.max_epochs {
            log::info!("cgan epoch {}/{}: val_mse {:.5}", epoch + 1, cfg.max_epochs, val_mse);
        }
        log.push(entry);
    }

    let (epoch, criterion, gp, dp) = best.expect("max_epochs >= 1");
    let mut gen = trainer.gen;
    let mut disc = trainer.disc;
    gen.params_mut().copy_from(&gp)?;
    disc.params_mut().copy_from(&dp)?;
    Ok(CganCheckpoint {
        config: cfg.clone(),
        generator: gen,
        discriminator: disc,
        epoch,
        criterion,
        log,
    })
}

/// Best networks of a CGAN run plus the per-epoch log.
#[derive(Clone, Debug)]
pub struct CganCheckpoint {
    pub config: CganConfig,
    pub generator: UNetGenerator,
    pub discriminator: PatchDiscriminator,
    /// Epoch (0-based) at which the stored networks were captured.
    pub epoch: usize,
    pub criterion: f64,
    pub log: Vec<CganEpochLog>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CganManifest {
    kind: String,
    epoch: usize,
    criterion: f64,
    criterion_kind: String,
    config_digest: String,
    seed: u64,
    config: CganConfig,
    blob_sha256: String,
    generator_params: usize,
    discriminator_params: usize,
    log: Vec<CganEpochLog>,
}

const KIND: &str = "cgan";

impl CganCheckpoint {
    pub fn config_digest(&self) -> String {
        checkpoint::config_digest(&self.config)
    }

    /// sha256 of the parameter blob.
    pub fn digest(&self) -> String {
        checkpoint::sha256_hex(&checkpoint::encode_blob(&[
            self.generator.params(),
            self.discriminator.params(),
        ]))
    }

    /// Writes the blob to `path` and its manifest next to it; returns the blob digest.
    pub fn save(&self, path: &Path, overwrite: bool) -> Result<String> {
        let mpath = checkpoint::manifest_path(path);
        checkpoint::check_writable(path, overwrite)?;
        checkpoint::check_writable(&mpath, overwrite)?;
        let digest = checkpoint::save_blob(path, &[self.generator.params(), self.discriminator.params()])?;
        let manifest = CganManifest {
            kind: KIND.into(),
            epoch: self.epoch,
            criterion: self.criterion,
            criterion_kind: CRITERION_KIND.into(),
            config_digest: self.config_digest(),
            seed: self.config.seed,
            config: self.config.clone(),
            blob_sha256: digest.clone(),
            generator_params: self.generator.param_count(),
            discriminator_params: self.discriminator.param_count(),
            log: self.log.clone(),
        };
        checkpoint::write_json(&mpath, &manifest)?;
        Ok(digest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let manifest: CganManifest = checkpoint::read_json(&checkpoint::manifest_path(path))?;
        if manifest.kind != KIND {
            return Err(Error::Checkpoint(format!(
                "{}: expected a {KIND} checkpoint, found `{}`",
                path.display(),
                manifest.kind
            )));
        }
        if checkpoint::config_digest(&manifest.config) != manifest.config_digest {
            return Err(Error::Checkpoint(format!("{}: config digest mismatch", path.display())));
        }
        if !manifest.criterion.is_finite() {
            return Err(Error::Checkpoint(format!("{}: non-finite criterion", path.display())));
        }
        let sets = checkpoint::load_blob(path, 2, &manifest.blob_sha256)?;
        let mut generator = build_cgan_generator(&manifest.config)?;
        let mut discriminator = build_patch_discriminator(&manifest.config)?;
        generator.params_mut().copy_from(&sets[0])?;
        discriminator.params_mut().copy_from(&sets[1])?;
        Ok(Self {
            config: manifest.config,
            generator,
            discriminator,
            epoch: manifest.epoch,
            criterion: manifest.criterion,
            log: manifest.log,
        })
    }
}

/// Inference-mode generator pass on one mask.
pub fn cgan_generate(ckpt: &CganCheckpoint, mask: &BinaryMask) -> Result<RgbImage> {
    let s = ckpt.config.image_size;
    if mask.height() != s || mask.width() != s {
        return Err(Error::Shape(format!(
            "mask is {}x{}, generator expects {s}x{s}",
            mask.height(),
            mask.width()
        )));
    }
    let out = ckpt.generator.infer(Tensor::stack(&[mask_to_tensor(mask)])?);
    tensor_to_rgb(&out)
}
