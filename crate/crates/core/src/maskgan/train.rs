use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{flip_event, sample_latent, smooth_label_in, LatentSeed, MaskGanConfig, NoiseGenerator};
use crate::cgan::PatchDiscriminator;
use crate::checkpoint;
use crate::convert::{mask_to_tensor, tensor_to_mask};
use crate::error::{Error, Result};
use crate::imaging::BinaryMask;
use crate::label::ClassLabel;
use crate::loss::bce_with_logits;
use crate::nn::{Adam, Graph, Network, Tensor};
use crate::rng::{self, Rng};

/// Target used for every generator update.
pub const G_TARGET: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledMask {
    pub id: String,
    pub label: ClassLabel,
    pub mask: BinaryMask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanEpochLog {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub flips: usize,
}

/// Every target actually used, one entry per batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StabilizerTrace {
    /// `(real, fake)` discriminator targets after flipping.
    pub d_targets: Vec<(f64, f64)>,
    pub flipped: Vec<bool>,
    pub g_targets: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct NoiseGanTrainer {
    gen: NoiseGenerator,
    disc: PatchDiscriminator,
    g_opt: Adam,
    d_opt: Adam,
}

impl NoiseGanTrainer {
    pub fn new(cfg: &MaskGanConfig, channels: usize) -> Result<Self> {
        cfg.validate()?;
        let idx = cfg.class_label.index() as u64;
        let gen = NoiseGenerator::new(
            cfg.generator_config(channels),
            &mut rng::derive(cfg.seed, "noise-gan-init-generator", idx),
        )?;
        let disc = PatchDiscriminator::new(
            cfg.discriminator_config(channels),
            &mut rng::derive(cfg.seed, "noise-gan-init-discriminator", idx),
        )?;
        Ok(Self {
            g_opt: Adam::new(cfg.adam, gen.params()),
            d_opt: Adam::new(cfg.disc_adam(), disc.params()),
            gen,
            disc,
        })
    }

    pub fn generator(&self) -> &NoiseGenerator {
        &self.gen
    }

    pub fn discriminator(&self) -> &PatchDiscriminator {
        &self.disc
    }

    /// Discriminator update with the generator frozen.
    pub fn d_step(&mut self, real: &Tensor, z: &Tensor, real_target: f64, fake_target: f64) -> f64 {
        let fake = self.gen.infer(z.clone());
        let (loss, grads) = gan_d_loss_and_grads(&self.disc, real, &fake, real_target, fake_target);
        self.d_opt.step(self.disc.params_mut(), &grads);
        loss
    }

    /// Generator update against [`G_TARGET`] with the discriminator frozen.
    pub fn g_step(&mut self, z: &Tensor) -> f64 {
        let (loss, grads) = gan_g_loss_and_grads(&self.gen, &self.disc, z);
        self.g_opt.step(self.gen.params_mut(), &grads);
        loss
    }

    pub fn into_parts(self) -> (NoiseGenerator, PatchDiscriminator) {
        (self.gen, self.disc)
    }
}

pub fn gan_d_loss_and_grads(
    disc: &PatchDiscriminator,
    real: &Tensor,
    fake: &Tensor,
    real_target: f64,
    fake_target: f64,
) -> (f64, Vec<Option<Tensor>>) {
    let mut g = Graph::train();
    let p = g.bind(disc.params());
    let xr = g.input(real.clone());
    let xf = g.input(fake.clone());
    let lr = disc.logits(&mut g, &p, xr);
    let lf = disc.logits(&mut g, &p, xf);
    let (a, ga) = bce_with_logits(g.value(lr).data(), real_target);
    let (b, gb) = bce_with_logits(g.value(lf).data(), fake_target);
    let seeds = [
        (lr, Tensor::from_vec(g.value(lr).shape(), ga).expect("seed shape")),
        (lf, Tensor::from_vec(g.value(lf).shape(), gb).expect("seed shape")),
    ];
    let mut grads = g.backward(&seeds);
    (a + b, grads.take_params(&p))
}

pub fn gan_g_loss_and_grads(gen: &NoiseGenerator, disc: &PatchDiscriminator, z: &Tensor) -> (f64, Vec<Option<Tensor>>) {
    let mut g = Graph::train();
    let pg = g.bind(gen.params());
    let pd = g.bind_frozen(disc.params());
    let zv = g.input(z.clone());
    let fake = gen.forward(&mut g, &pg, zv);
    let l = disc.logits(&mut g, &pd, fake);
    let (loss, gl) = bce_with_logits(g.value(l).data(), G_TARGET);
    let seed = Tensor::from_vec(g.value(l).shape(), gl).expect("seed shape");
    let mut grads = g.backward(&[(l, seed)]);
    (loss, grads.take_params(&pg))
}

fn latent_batch(n: usize, d: usize, rng: &mut Rng) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        data.extend_from_slice(sample_latent(d, rng).expect("d >= 1").as_slice());
    }
    Tensor::from_vec(&[n, d], data).expect("latent batch")
}

/// Result of [`train_noise_gan`].
#[derive(Clone, Debug)]
pub struct NoiseGanRun {
    pub generator: NoiseGenerator,
    pub discriminator: PatchDiscriminator,
    pub log: Vec<GanEpochLog>,
    pub trace: StabilizerTrace,
}

/// Alternating D/G training on `samples` (each `[channels, s, s]`). Each
/// batch draws one smoothed real and fake target, possibly swaps them, and
/// reuses its latent batch for the generator update. Streams for shuffling,
/// latents, smoothing and flips are derived separately from the seed.
pub fn train_noise_gan(samples: &[Tensor], cfg: &MaskGanConfig, channels: usize) -> Result<NoiseGanRun> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Param("no training samples".into()));
    }
    let want = [channels, cfg.image_size, cfg.image_size];
    if let Some((i, t)) = samples.iter().enumerate().find(|(_, t)| t.shape() != want) {
        return Err(Error::Shape(format!(
            "sample {i} has shape {:?}, expected {want:?}",
            t.shape()
        )));
    }
    let idx = cfg.class_label.index() as u64;
    let mut trainer = NoiseGanTrainer::new(cfg, channels)?;
    let mut latent_rng = rng::derive(cfg.seed, "noise-gan-latent", idx);
    let mut smooth_rng = rng::derive(cfg.seed, "noise-gan-smooth", idx);
    let mut flip_rng = rng::derive(cfg.seed, "noise-gan-flip", idx);
    let mut log = Vec::with_capacity(cfg.max_epochs);
    let mut trace = StabilizerTrace::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::derive(
            cfg.seed,
            "noise-gan-shuffle",
            (idx << 32) | epoch as u64,
        ));
        let (mut d_sum, mut g_sum, mut flips, mut nb) = (0.0, 0.0, 0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let real = Tensor::stack(&chunk.iter().map(|i| samples[*i].clone()).collect::<Vec<_>>())?;
            let z = latent_batch(chunk.len(), cfg.latent_dim, &mut latent_rng);
            let rt = smooth_label_in(cfg.real_range, &mut smooth_rng);
            let ft = smooth_label_in(cfg.fake_range, &mut smooth_rng);
            let flipped = flip_event(cfg.flip_probability, &mut flip_rng);
            let (rt, ft) = if flipped { (ft, rt) } else { (rt, ft) };
            let d = trainer.d_step(&real, &z, rt, ft);
            if !d.is_finite() {
                return Err(Error::NonFinite {
                    what: "discriminator",
                    epoch,
                    batch: b,
                });
            }
            let g = trainer.g_step(&z);
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    what: "generator",
                    epoch,
                    batch: b,
                });
            }
            trace.d_targets.push((rt, ft));
            trace.flipped.push(flipped);
            trace.g_targets.push(G_TARGET);
            d_sum += d;
            g_sum += g;
            flips += usize::from(flipped);
            nb += 1;
        }
        let entry = GanEpochLog {
            epoch,
            d_loss: d_sum / nb as f64,
            g_loss: g_sum / nb as f64,
            flips,
        };
        if (epoch + 1) % 50 == 0 || epoch + 1 == cfg.max_epochs {
            log::info!(
                "noise gan ({}) epoch {}/{}: d {:.4} g {:.4}",
                cfg.class_label,
                epoch + 1,
                cfg.max_epochs,
                entry.d_loss,
                entry.g_loss
            );
        }
        log.push(entry);
    }
    let (generator, discriminator) = trainer.into_parts();
    Ok(NoiseGanRun {
        generator,
        discriminator,
        log,
        trace,
    })
}

/// Final-epoch mask GAN for one class.
#[derive(Clone, Debug)]
pub struct MaskGanCheckpoint {
    pub config: MaskGanConfig,
    pub generator: NoiseGenerator,
    pub discriminator: PatchDiscriminator,
    pub epoch: usize,
    /// Ids of the masks the model was trained on, sorted.
    pub training_ids: Vec<String>,
    pub log: Vec<GanEpochLog>,
}

pub fn train_maskgan(masks: &[LabeledMask], cfg: &MaskGanConfig) -> Result<MaskGanCheckpoint> {
    train_maskgan_traced(masks, cfg).map(|(c, _)| c)
}

/// Like [`train_maskgan`], also returning the targets used per batch.
pub fn train_maskgan_traced(
    masks: &[LabeledMask],
    cfg: &MaskGanConfig,
) -> Result<(MaskGanCheckpoint, StabilizerTrace)> {
    if masks.is_empty() {
        return Err(Error::Param("no training masks".into()));
    }
    if let Some(m) = masks.iter().find(|m| m.label != cfg.class_label) {
        return Err(Error::Contract(format!(
            "mask `{}` is {} but this model is for {}",
            m.id, m.label, cfg.class_label
        )));
    }
    let samples: Vec<Tensor> = masks.iter().map(|m| mask_to_tensor(&m.mask)).collect();
    let run = train_noise_gan(&samples, cfg, 1)?;
    let mut training_ids: Vec<String> = masks.iter().map(|m| m.id.clone()).collect();
    training_ids.sort();
    let ckpt = MaskGanCheckpoint {
        config: cfg.clone(),
        generator: run.generator,
        discriminator: run.discriminator,
        epoch: cfg.max_epochs - 1,
        training_ids,
        log: run.log,
    };
    Ok((ckpt, run.trace))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskGanManifest {
    kind: String,
    class_label: ClassLabel,
    epoch: usize,
    threshold: f64,
    config_digest: String,
    seed: u64,
    config: MaskGanConfig,
    blob_sha256: String,
    training_ids: Vec<String>,
    training_digest: String,
    log: Vec<GanEpochLog>,
}

const KIND: &str = "maskgan";

impl MaskGanCheckpoint {
    pub fn class_label(&self) -> ClassLabel {
        self.config.class_label
    }

    pub fn config_digest(&self) -> String {
        checkpoint::config_digest(&self.config)
    }

    pub fn digest(&self) -> String {
        checkpoint::sha256_hex(&checkpoint::encode_blob(&[
            self.generator.params(),
            self.discriminator.params(),
        ]))
    }

    /// sha256 over the newline-joined sorted training ids.
    pub fn training_digest(&self) -> String {
        checkpoint::sha256_hex(self.training_ids.join("\n").as_bytes())
    }

    pub fn save(&self, path: &Path, overwrite: bool) -> Result<String> {
        let mpath = checkpoint::manifest_path(path);
        checkpoint::check_writable(path, overwrite)?;
        checkpoint::check_writable(&mpath, overwrite)?;
        let digest = checkpoint::save_blob(path, &[self.generator.params(), self.discriminator.params()])?;
        let manifest = MaskGanManifest {
            kind: KIND.into(),
            class_label: self.config.class_label,
            epoch: self.epoch,
            threshold: self.config.threshold,
            config_digest: self.config_digest(),
            seed: self.config.seed,
            config: self.config.clone(),
            blob_sha256: digest.clone(),
            training_ids: self.training_ids.clone(),
            training_digest: self.training_digest(),
            log: self.log.clone(),
        };
        checkpoint::write_json(&mpath, &manifest)?;
        Ok(digest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: MaskGanManifest = checkpoint::read_json(&checkpoint::manifest_path(path))?;
        if m.kind != KIND {
            return Err(Error::Checkpoint(format!(
                "{}: expected a {KIND} checkpoint, found `{}`",
                path.display(),
                m.kind
            )));
        }
        if checkpoint::config_digest(&m.config) != m.config_digest || m.config.class_label != m.class_label {
            return Err(Error::Checkpoint(format!("{}: config digest mismatch", path.display())));
        }
        let sets = checkpoint::load_blob(path, 2, &m.blob_sha256)?;
        let mut trainer = NoiseGanTrainer::new(&m.config, 1)?;
        trainer.gen.params_mut().copy_from(&sets[0])?;
        trainer.disc.params_mut().copy_from(&sets[1])?;
        let (generator, discriminator) = trainer.into_parts();
        let ckpt = Self {
            config: m.config,
            generator,
            discriminator,
            epoch: m.epoch,
            training_ids: m.training_ids,
            log: m.log,
        };
        if ckpt.training_digest() != m.training_digest {
            return Err(Error::Checkpoint(format!(
                "{}: training id digest mismatch",
                path.display()
            )));
        }
        Ok(ckpt)
    }
}

/// Continuous generator output `[1, s, s]` for one latent.
pub fn generate_map(ckpt: &MaskGanCheckpoint, z: &LatentSeed) -> Result<Tensor> {
    let d = ckpt.config.latent_dim;
    if z.dim() != d {
        return Err(Error::Shape(format!(
            "latent has dimension {}, model expects {d}",
            z.dim()
        )));
    }
    let out = ckpt.generator.infer(Tensor::from_vec(&[1, d], z.as_slice().to_vec())?);
    Ok(out.item(0))
}

/// Generator output binarised at the configured threshold.
pub fn generate_mask(ckpt: &MaskGanCheckpoint, z: &LatentSeed) -> Result<BinaryMask> {
    tensor_to_mask(&generate_map(ckpt, z)?, ckpt.config.threshold)
}
