//! Classifier registry and the ablation harness: training-set conditions,
//! train/evaluate per cell, accuracy tables and the unconditioned GAN
//! baseline.

mod backbones;
mod baseline;
mod condition;
mod table;
mod train;

#[cfg(test)]
mod tests;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::AugmentParams;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, Bound, Graph, Network, ParamSet, Signature, Var};
use crate::rng;

pub use backbones::{DenseNet, InceptionV3, ResNet, SmallCnn, INCEPTION_MIN_INPUT};
pub use baseline::{
    generate_baseline_image, synthesize_gan_baseline, train_gan_baseline, write_gan_baseline, BaselineSample,
    GanBaselineCheckpoint, GAN_BASELINE_KIND,
};
pub use condition::{assemble_condition, audit_leakage, Condition, ImageBank, Ingredient, TrainItem, TrainingSet};
pub use table::{AblationReport, AccuracyTable, TableMeta};
pub use train::{accuracy, predict, train_and_eval, train_cell, CellResult, ClassifyEpochLog, Prediction};

/// Registered classifier architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    #[serde(rename = "small-cnn")]
    SmallCnn,
    Resnet152,
    Densenet161,
    Inceptionv3,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::SmallCnn, Arch::Resnet152, Arch::Densenet161, Arch::Inceptionv3];

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::SmallCnn => "small-cnn",
            Arch::Resnet152 => "resnet152",
            Arch::Densenet161 => "densenet161",
            Arch::Inceptionv3 => "inceptionv3",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::UnknownArch(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    /// Side length images are resized to before entering the network.
    pub input_size: usize,
    /// First-block width of `small-cnn`.
    pub width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Transforms applied on the fly to originals under `trad`.
    pub augment: AugmentParams,
    /// Parameter blob whose name/shape-matching entries seed the network.
    pub pretrained: Option<PathBuf>,
    /// Build the Inception auxiliary head (parameters only).
    pub aux_logits: bool,
    pub seed: u64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            width: 16,
            epochs: 30,
            batch_size: 16,
            adam: AdamConfig {
                lr: 1e-3,
                beta1: 0.9,
                ..AdamConfig::default()
            },
            augment: AugmentParams::default(),
            pretrained: None,
            aux_logits: true,
            seed: 0,
        }
    }
}

impl ClassifyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.width == 0 {
            return Err(Error::Config(
                "classify epochs, batch_size and width must be >= 1".into(),
            ));
        }
        if self.input_size < 8 {
            return Err(Error::Config(format!("classify input_size {} < 8", self.input_size)));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("classify lr {} must be positive", self.adam.lr)));
        }
        self.augment.validate()
    }
}

/// A classifier from the registry. Forward maps `[n, 3, s, s]` to `[n, k]` logits.
pub struct Classifier {
    arch: Arch,
    net: Box<dyn Network + Send + Sync>,
}

impl fmt::Debug for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Classifier")
            .field("arch", &self.arch)
            .field("params", &self.net.param_count())
            .finish()
    }
}

impl Classifier {
    pub fn arch(&self) -> Arch {
        self.arch
    }
}

impl Network for Classifier {
    fn params(&self) -> &ParamSet {
        self.net.params()
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        self.net.params_mut()
    }

    fn signature(&self) -> Signature {
        self.net.signature()
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        self.net.forward(g, p, x)
    }
}

/// Builds `arch` for `n_classes` outputs at `cfg.input_size`, initialised
/// from the `classify-init` stream of `cfg.seed`.
pub fn build_classifier(arch: &str, n_classes: usize, cfg: &ClassifyConfig) -> Result<Classifier> {
    let arch: Arch = arch.parse()?;
    if n_classes < 2 {
        return Err(Error::Param(format!("n_classes {n_classes} < 2")));
    }
    let s = cfg.input_size;
    let min = match arch {
        Arch::SmallCnn => 8,
        Arch::Resnet152 | Arch::Densenet161 => 32,
        Arch::Inceptionv3 => INCEPTION_MIN_INPUT,
    };
    if s < min {
        return Err(Error::Param(format!("{arch} needs input_size >= {min}, got {s}")));
    }
    let mut r = rng::derive(cfg.seed, "classify-init", 0);
    let net: Box<dyn Network + Send + Sync> = match arch {
        Arch::SmallCnn => Box::new(SmallCnn::new(n_classes, s, cfg.width, &mut r)),
        Arch::Resnet152 => Box::new(ResNet::new([3, 8, 36, 3], n_classes, s, &mut r)),
        Arch::Densenet161 => Box::new(DenseNet::new(48, [6, 12, 36, 24], 96, n_classes, s, &mut r)),
        Arch::Inceptionv3 => Box::new(InceptionV3::new(n_classes, s, cfg.aux_logits, &mut r)),
    };
    Ok(Classifier { arch, net })
}

/// Copies matching entries from the first parameter set of a blob file.
/// Returns the names left at their initial values; fails if nothing matched.
pub fn load_pretrained(net: &mut dyn Network, path: &Path) -> Result<Vec<String>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let src = ParamSet::read_from(&mut bytes.as_slice())?;
    let skipped = net.params_mut().load_matching(&src);
    if skipped.len() == net.params().len() {
        return Err(Error::Checkpoint(format!(
            "{}: no parameter matches the network by name and shape",
            path.display()
        )));
    }
    Ok(skipped)
}
