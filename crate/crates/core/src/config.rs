//! Run configuration: one TOML file with a section per stage and a master
//! seed that every stage derives its randomness from.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cgan::CganConfig;
use crate::checkpoint;
use crate::classify::ClassifyConfig;
use crate::data::{SplitRatio, ToyCorpusConfig};
use crate::error::{Error, Result};
use crate::imaging::ExtractParams;
use crate::maskgan::MaskGanConfig;

/// Overrides `output_root` when set.
pub const OUTPUT_ROOT_ENV: &str = "CYTOSYNTH_OUTPUT_ROOT";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub toy: ToyCorpusConfig,
    pub ratio: SplitRatio,
    /// Keep only the first N ids per class before splitting.
    pub cap_per_class: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisSection {
    /// Synthetic images per original training image.
    pub ratio: usize,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        Self { ratio: 2 }
    }
}

/// Stage sections keep their own `seed` keys for standalone use; when run
/// through a `RunConfig` the master `seed` replaces them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_root: PathBuf,
    pub data: DataSection,
    pub imaging: ExtractParams,
    pub cgan: CganConfig,
    pub maskgan: MaskGanConfig,
    pub gan_baseline: MaskGanConfig,
    pub synthesis: SynthesisSection,
    pub classify: ClassifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_root: PathBuf::from("."),
            data: DataSection::default(),
            imaging: ExtractParams::default(),
            cgan: CganConfig::default(),
            maskgan: MaskGanConfig::default(),
            gan_baseline: MaskGanConfig::default(),
            synthesis: SynthesisSection::default(),
            classify: ClassifyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.apply_master_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply_master_seed(&mut self) {
        let s = self.seed;
        self.data.toy.seed = s;
        self.imaging.seed = s;
        self.cgan.seed = s;
        self.maskgan.seed = s;
        self.gan_baseline.seed = s;
        self.classify.seed = s;
    }

    pub fn validate(&self) -> Result<()> {
        self.data.toy.validate()?;
        if self.data.ratio.total() == 0 {
            return Err(Error::Config("split ratio sums to zero".into()));
        }
        if self.data.cap_per_class == Some(0) {
            return Err(Error::Config("cap_per_class must be >= 1".into()));
        }
        self.imaging.validate()?;
        self.cgan.validate()?;
        self.maskgan.validate()?;
        self.gan_baseline.validate()?;
        if self.synthesis.ratio == 0 {
            return Err(Error::Config("synthesis ratio must be >= 1".into()));
        }
        self.classify.validate()
    }

    pub fn digest(&self) -> String {
        checkpoint::config_digest(self)
    }

    /// `output_root`, or the environment override.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_root.clone(),
        }
    }

    /// Relative paths are placed under the output root.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.output_root().join(path)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("sed = 3").is_err());
        assert!(RunConfig::from_toml_str("[cgan]\nlamda_mse = 10.0").is_err());
        assert!(RunConfig::from_toml_str("[classify]\nepochs = 3").is_ok());
    }

    #[test]
    fn master_seed_reaches_every_stage() {
        let cfg = RunConfig::from_toml_str("seed = 42\n[cgan]\nseed = 7").unwrap();
        assert_eq!(cfg.cgan.seed, 42);
        assert_eq!(cfg.maskgan.seed, 42);
        assert_eq!(cfg.classify.seed, 42);
        assert_eq!(cfg.data.toy.seed, 42);
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.classify.epochs += 1;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml_str("[synthesis]\nratio = 0").is_err());
        assert!(RunConfig::from_toml_str("[data]\ncap_per_class = 0").is_err());
    }
}
