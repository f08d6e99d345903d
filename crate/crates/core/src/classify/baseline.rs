//! Unconditioned noise-to-RGB GAN per class, the control for mask-conditioned synthesis.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cgan::PatchDiscriminator;
use crate::checkpoint;
use crate::convert::{rgb_to_tensor, tensor_to_rgb};
use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::imaging::{resize_rgb_bilinear, save_rgb_png, RgbImage};
use crate::label::ClassLabel;
use crate::maskgan::{train_noise_gan, GanEpochLog, LatentSeed, MaskGanConfig, NoiseGanTrainer, NoiseGenerator};
use crate::nn::{Network, Tensor};
use crate::synthesis::{draw_index, sample_id, SynthEntry, SynthManifest, MANIFEST_NAME};

pub const GAN_BASELINE_KIND: &str = "gan-baseline";
const CHANNELS: usize = 3;

#[derive(Clone, Debug)]
pub struct GanBaselineCheckpoint {
    pub config: MaskGanConfig,
    pub generator: NoiseGenerator,
    pub discriminator: PatchDiscriminator,
    pub epoch: usize,
    pub training_ids: Vec<String>,
    pub log: Vec<GanEpochLog>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaselineManifest {
    kind: String,
    class_label: ClassLabel,
    epoch: usize,
    config_digest: String,
    seed: u64,
    config: MaskGanConfig,
    blob_sha256: String,
    training_ids: Vec<String>,
    log: Vec<GanEpochLog>,
}

/// Trains on the images of `cfg.class_label`, resized to `cfg.image_size`.
pub fn train_gan_baseline(images: &[LabeledImage], cfg: &MaskGanConfig) -> Result<GanBaselineCheckpoint> {
    if let Some(i) = images.iter().find(|i| i.label != cfg.class_label) {
        return Err(Error::Contract(format!(
            "`{}` is {}, the model is for {}",
            i.id, i.label, cfg.class_label
        )));
    }
    let s = cfg.image_size;
    let samples: Vec<Tensor> = images
        .iter()
        .map(|i| {
            if i.image.dims() == (s, s) {
                rgb_to_tensor(&i.image)
            } else {
                rgb_to_tensor(&resize_rgb_bilinear(&i.image, s, s))
            }
        })
        .collect();
    let run = train_noise_gan(&samples, cfg, CHANNELS)?;
    let mut training_ids: Vec<String> = images.iter().map(|i| i.id.clone()).collect();
    training_ids.sort();
    Ok(GanBaselineCheckpoint {
        config: cfg.clone(),
        generator: run.generator,
        discriminator: run.discriminator,
        epoch: cfg.max_epochs.saturating_sub(1),
        training_ids,
        log: run.log,
    })
}

impl GanBaselineCheckpoint {
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

    pub fn save(&self, path: &Path, overwrite: bool) -> Result<String> {
        let mpath = checkpoint::manifest_path(path);
        checkpoint::check_writable(path, overwrite)?;
        checkpoint::check_writable(&mpath, overwrite)?;
        let digest = checkpoint::save_blob(path, &[self.generator.params(), self.discriminator.params()])?;
        let m = BaselineManifest {
            kind: GAN_BASELINE_KIND.into(),
            class_label: self.config.class_label,
            epoch: self.epoch,
            config_digest: self.config_digest(),
            seed: self.config.seed,
            config: self.config.clone(),
            blob_sha256: digest.clone(),
            training_ids: self.training_ids.clone(),
            log: self.log.clone(),
        };
        checkpoint::write_json(&mpath, &m)?;
        Ok(digest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: BaselineManifest = checkpoint::read_json(&checkpoint::manifest_path(path))?;
        if m.kind != GAN_BASELINE_KIND {
            return Err(Error::Checkpoint(format!(
                "{}: expected a {GAN_BASELINE_KIND} checkpoint, found `{}`",
                path.display(),
                m.kind
            )));
        }
        if checkpoint::config_digest(&m.config) != m.config_digest || m.config.class_label != m.class_label {
            return Err(Error::Checkpoint(format!("{}: config digest mismatch", path.display())));
        }
        let sets = checkpoint::load_blob(path, 2, &m.blob_sha256)?;
        let (mut generator, mut discriminator) = NoiseGanTrainer::new(&m.config, CHANNELS)?.into_parts();
        generator.params_mut().copy_from(&sets[0])?;
        discriminator.params_mut().copy_from(&sets[1])?;
        Ok(Self {
            config: m.config,
            generator,
            discriminator,
            epoch: m.epoch,
            training_ids: m.training_ids,
            log: m.log,
        })
    }
}

pub fn generate_baseline_image(ckpt: &GanBaselineCheckpoint, z: &LatentSeed) -> Result<RgbImage> {
    let d = ckpt.config.latent_dim;
    if z.dim() != d {
        return Err(Error::Shape(format!(
            "latent has dimension {}, model expects {d}",
            z.dim()
        )));
    }
    let out = ckpt.generator.infer(Tensor::from_vec(&[1, d], z.as_slice().to_vec())?);
    tensor_to_rgb(&out.item(0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineSample {
    pub image: RgbImage,
    pub label: ClassLabel,
    pub draw_index: u64,
    pub checkpoint_digest: String,
}

/// `n_per_class` images per class with the same latent indexing as the
/// proposed pipeline.
pub fn synthesize_gan_baseline(
    ckpts: &[&GanBaselineCheckpoint],
    n_per_class: usize,
    master_seed: u64,
) -> Result<Vec<BaselineSample>> {
    if n_per_class == 0 {
        return Err(Error::Param("n_per_class must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(2 * n_per_class);
    for label in ClassLabel::ALL {
        let ck = ckpts
            .iter()
            .find(|c| c.class_label() == label)
            .ok_or_else(|| Error::Contract(format!("no baseline model for class {label}")))?;
        let digest = ck.digest();
        for i in 0..n_per_class {
            let idx = draw_index(label, i, n_per_class);
            let z = LatentSeed::derive(master_seed, idx, ck.config.latent_dim)?;
            out.push(BaselineSample {
                image: generate_baseline_image(ck, &z)?,
                label,
                draw_index: idx,
                checkpoint_digest: digest.clone(),
            });
        }
    }
    Ok(out)
}

/// Same layout as the proposed set, without masks.
pub fn write_gan_baseline(
    dir: &Path,
    samples: &[BaselineSample],
    n_per_class: usize,
    master_seed: u64,
    config_digest: Option<&str>,
    overwrite: bool,
) -> Result<SynthManifest> {
    let mpath = dir.join(MANIFEST_NAME);
    checkpoint::check_writable(&mpath, overwrite)?;
    let mut checkpoints = BTreeMap::new();
    let mut entries = Vec::with_capacity(samples.len());
    let mut next = [0usize; 2];
    for s in samples {
        checkpoints.insert(format!("{GAN_BASELINE_KIND}-{}", s.label), s.checkpoint_digest.clone());
        let i = &mut next[s.label.index()];
        let id = sample_id(s.label, *i);
        *i += 1;
        let path = dir.join(&id);
        save_rgb_png(&s.image, &path)?;
        entries.push(SynthEntry {
            id,
            label: s.label,
            draw_index: s.draw_index,
            image_sha256: checkpoint::file_digest(&path)?,
            mask_sha256: None,
        });
    }
    let manifest = SynthManifest {
        kind: GAN_BASELINE_KIND.into(),
        master_seed,
        n_per_class,
        checkpoints,
        config_digest: config_digest.map(str::to_string),
        samples: entries,
    };
    checkpoint::write_json(&mpath, &manifest)?;
    Ok(manifest)
}
