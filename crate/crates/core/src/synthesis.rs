//! Composition of a class-specific mask generator with the mask-to-image
//! generator, and the on-disk layout of the resulting synthetic set.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cgan::{cgan_generate, CganCheckpoint};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::imaging::{save_mask_png, save_rgb_png, BinaryMask, RgbImage};
use crate::label::ClassLabel;
use crate::maskgan::{generate_mask, LatentSeed, MaskGanCheckpoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master_seed: u64,
    pub draw_index: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub cgan_digest: String,
    pub maskgan_digest: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub image: RgbImage,
    pub mask: BinaryMask,
    pub label: ClassLabel,
    /// Present when the latent came from an indexed master-seed derivation.
    pub seed: Option<SeedRecord>,
    pub provenance: Provenance,
}

fn check_compatible(cgan: &CganCheckpoint, maskgan: &MaskGanCheckpoint, label: ClassLabel) -> Result<()> {
    if maskgan.class_label() != label {
        return Err(Error::Contract(format!(
            "requested a {label} sample from the {} mask model",
            maskgan.class_label()
        )));
    }
    if maskgan.config.image_size != cgan.config.image_size {
        return Err(Error::Shape(format!(
            "mask model emits {0}x{0} masks, image model expects {1}x{1}",
            maskgan.config.image_size, cgan.config.image_size
        )));
    }
    Ok(())
}

fn compose(cgan: &CganCheckpoint, maskgan: &MaskGanCheckpoint, z: &LatentSeed) -> Result<(BinaryMask, RgbImage)> {
    let mask = generate_mask(maskgan, z)?;
    let image = cgan_generate(cgan, &mask)?;
    Ok((mask, image))
}

/// `image = cgan_generate(cgan, generate_mask(maskgan, z))`.
pub fn synthesize_sample(
    cgan: &CganCheckpoint,
    maskgan: &MaskGanCheckpoint,
    label: ClassLabel,
    z: &LatentSeed,
) -> Result<SyntheticSample> {
    check_compatible(cgan, maskgan, label)?;
    let (mask, image) = compose(cgan, maskgan, z)?;
    Ok(SyntheticSample {
        image,
        mask,
        label,
        seed: None,
        provenance: Provenance {
            cgan_digest: cgan.digest(),
            maskgan_digest: maskgan.digest(),
        },
    })
}

/// Synthetic count per class for `ratio` synthetic images per original
/// training image: `ratio * floor(train_total / 2)`.
pub fn n_per_class_for_ratio(train_counts: &[usize], ratio: usize) -> usize {
    ratio * (train_counts.iter().sum::<usize>() / 2)
}

/// Global latent index of sample `i` of `label`.
pub fn draw_index(label: ClassLabel, i: usize, n_per_class: usize) -> u64 {
    (label.index() * n_per_class + i) as u64
}

/// `n_per_class` samples per class; sample `i` of a class uses latent
/// [`draw_index`] of the master-seed stream. Benign samples come first.
pub fn synthesize_dataset(
    cgan: &CganCheckpoint,
    maskgans: &[&MaskGanCheckpoint],
    n_per_class: usize,
    master_seed: u64,
) -> Result<Vec<SyntheticSample>> {
    if n_per_class == 0 {
        return Err(Error::Param("n_per_class must be >= 1".into()));
    }
    let cgan_digest = cgan.digest();
    let mut out = Vec::with_capacity(2 * n_per_class);
    for label in ClassLabel::ALL {
        let mg = maskgans
            .iter()
            .find(|m| m.class_label() == label)
            .ok_or_else(|| Error::Contract(format!("no mask model for class {label}")))?;
        check_compatible(cgan, mg, label)?;
        let maskgan_digest = mg.digest();
        for i in 0..n_per_class {
            let idx = draw_index(label, i, n_per_class);
            let z = LatentSeed::derive(master_seed, idx, mg.config.latent_dim)?;
            let (mask, image) = compose(cgan, mg, &z)?;
            out.push(SyntheticSample {
                image,
                mask,
                label,
                seed: Some(SeedRecord {
                    master_seed,
                    draw_index: idx,
                }),
                provenance: Provenance {
                    cgan_digest: cgan_digest.clone(),
                    maskgan_digest: maskgan_digest.clone(),
                },
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthEntry {
    /// Image path relative to the set directory, e.g. `benign/0003.png`.
    pub id: String,
    pub label: ClassLabel,
    pub draw_index: u64,
    pub image_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_sha256: Option<String>,
}

/// `manifest.json` of a generated image set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthManifest {
    /// `proposed` for mask-conditioned sets, `gan-baseline` for unconditioned ones.
    pub kind: String,
    pub master_seed: u64,
    pub n_per_class: usize,
    /// Checkpoint role -> blob digest.
    pub checkpoints: BTreeMap<String, String>,
    /// Digest of the run configuration that produced the set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    pub samples: Vec<SynthEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";
pub const MASK_DIR: &str = "masks";

impl SynthManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        checkpoint::read_json(&dir.join(MANIFEST_NAME))
    }

    pub fn count(&self, label: ClassLabel) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    /// Re-hashes every listed file and reports mismatches or missing files.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        let mut problems = Vec::new();
        for s in &self.samples {
            let mut files = vec![(dir.join(&s.id), &s.image_sha256)];
            if let Some(d) = &s.mask_sha256 {
                files.push((dir.join(MASK_DIR).join(&s.id), d));
            }
            for (path, want) in files {
                match checkpoint::file_digest(&path) {
                    Ok(got) if &got == want => {}
                    Ok(got) => problems.push(format!("{}: digest {got} != manifest {want}", path.display())),
                    Err(e) => problems.push(e.to_string()),
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Load(problems))
        }
    }
}

pub fn sample_id(label: ClassLabel, i: usize) -> String {
    format!("{}/{i:04}.png", label.as_str())
}

/// Writes images, masks and the manifest under `dir`. Refuses to touch an
/// existing manifest unless `overwrite` is set.
pub fn write_synthetic(
    dir: &Path,
    samples: &[SyntheticSample],
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
        checkpoints.insert("cgan".to_string(), s.provenance.cgan_digest.clone());
        checkpoints.insert(format!("maskgan-{}", s.label), s.provenance.maskgan_digest.clone());
        let i = &mut next[s.label.index()];
        let id = sample_id(s.label, *i);
        *i += 1;
        let img_path = dir.join(&id);
        let mask_path: PathBuf = dir.join(MASK_DIR).join(&id);
        save_rgb_png(&s.image, &img_path)?;
        save_mask_png(&s.mask, &mask_path)?;
        entries.push(SynthEntry {
            id,
            label: s.label,
            draw_index: s.seed.map_or(0, |r| r.draw_index),
            image_sha256: checkpoint::file_digest(&img_path)?,
            mask_sha256: Some(checkpoint::file_digest(&mask_path)?),
        });
    }
    let manifest = SynthManifest {
        kind: "proposed".into(),
        master_seed,
        n_per_class,
        checkpoints,
        config_digest: config_digest.map(str::to_string),
        samples: entries,
    };
    checkpoint::write_json(&mpath, &manifest)?;
    Ok(manifest)
}
