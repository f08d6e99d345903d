#![allow(dead_code)]

use cytosynth::cgan::{train_cgan, CganCheckpoint, CganConfig};
use cytosynth::data::{generate_toy_corpus, LabeledImage, ToyCorpusConfig};
use cytosynth::imaging::{BinaryMask, RgbImage};
use cytosynth::maskgan::{train_maskgan, LabeledMask, MaskGanCheckpoint, MaskGanConfig};
use cytosynth::ClassLabel;

pub fn toy(n_per_class: usize, image_size: usize) -> (Vec<LabeledImage>, Vec<BinaryMask>) {
    generate_toy_corpus(&ToyCorpusConfig {
        n_per_class,
        image_size,
        ..Default::default()
    })
    .unwrap()
}

pub fn pairs(images: &[LabeledImage], masks: &[BinaryMask]) -> Vec<(BinaryMask, RgbImage)> {
    masks
        .iter()
        .cloned()
        .zip(images.iter().map(|i| i.image.clone()))
        .collect()
}

pub fn labeled_masks(images: &[LabeledImage], masks: &[BinaryMask], label: ClassLabel) -> Vec<LabeledMask> {
    images
        .iter()
        .zip(masks)
        .filter(|(i, _)| i.label == label)
        .map(|(i, m)| LabeledMask {
            id: i.id.clone(),
            label,
            mask: m.clone(),
        })
        .collect()
}

/// Briefly trained 16x16 image and mask models; good enough to exercise plumbing.
pub fn tiny_models() -> (CganCheckpoint, MaskGanCheckpoint, MaskGanCheckpoint) {
    let (imgs, masks) = toy(3, 16);
    let ccfg = CganConfig {
        image_size: 16,
        depth: 3,
        gen_channels: 4,
        max_channels: 8,
        disc_channels: 4,
        disc_layers: 1,
        max_epochs: 2,
        ..Default::default()
    };
    let p = pairs(&imgs, &masks);
    let cgan = train_cgan(&p, &p, &ccfg).unwrap();
    let mg = |label| {
        let cfg = MaskGanConfig {
            latent_dim: 8,
            image_size: 16,
            gen_channels: 16,
            disc_channels: 4,
            disc_layers: 1,
            max_epochs: 2,
            batch_size: 2,
            class_label: label,
            ..Default::default()
        };
        train_maskgan(&labeled_masks(&imgs, &masks, label), &cfg).unwrap()
    };
    (cgan, mg(ClassLabel::Benign), mg(ClassLabel::Malignant))
}
