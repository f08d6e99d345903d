use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LabeledImage;
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatio {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self {
            train: 3,
            val: 1,
            test: 1,
        }
    }
}

impl SplitRatio {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    /// Per-class allocation of `n` items: train and val are floored, test takes the rest.
    pub fn allocate(&self, n: usize) -> SplitCounts {
        let t = self.total();
        let train = n * self.train / t;
        let val = n * self.val / t;
        SplitCounts {
            train,
            val,
            test: n - train - val,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    /// Corpus root the ids are relative to, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    pub seed: u64,
    pub ratio: SplitRatio,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub labels: BTreeMap<String, ClassLabel>,
    pub counts: BTreeMap<ClassLabel, SplitCounts>,
    /// Digest of the run configuration that produced the split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

impl SplitManifest {
    pub fn ids(&self, subset: Subset) -> &[String] {
        match subset {
            Subset::Train => &self.train,
            Subset::Val => &self.val,
            Subset::Test => &self.test,
        }
    }

    /// Ids of `subset` with the given label, in manifest order.
    pub fn ids_of(&self, subset: Subset, label: ClassLabel) -> Vec<&str> {
        self.ids(subset)
            .iter()
            .filter(|id| self.labels.get(*id) == Some(&label))
            .map(String::as_str)
            .collect()
    }

    pub fn subset_of(&self, id: &str) -> Option<Subset> {
        [Subset::Train, Subset::Val, Subset::Test]
            .into_iter()
            .find(|s| self.ids(*s).iter().any(|i| i == id))
    }

    pub fn label(&self, id: &str) -> Option<ClassLabel> {
        self.labels.get(id).copied()
    }

    /// Checks disjointness, exhaustiveness against `labels`, and recorded counts.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id.as_str()) {
                return Err(Error::Contract(format!("id `{id}` appears in more than one split")));
            }
            if !self.labels.contains_key(id) {
                return Err(Error::Contract(format!("id `{id}` has no label")));
            }
        }
        if seen.len() != self.labels.len() {
            return Err(Error::Contract("labelled ids missing from every split".into()));
        }
        for (label, c) in &self.counts {
            let got = SplitCounts {
                train: self.ids_of(Subset::Train, *label).len(),
                val: self.ids_of(Subset::Val, *label).len(),
                test: self.ids_of(Subset::Test, *label).len(),
            };
            if got != *c {
                return Err(Error::Contract(format!(
                    "{label}: counts {got:?} differ from recorded {c:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = checkpoint::read_json(path)?;
        m.validate()?;
        Ok(m)
    }
}

/// Stratified split: within each class the ids are sorted, shuffled with a
/// stream derived from `seed`, and cut by [`SplitRatio::allocate`].
pub fn split_corpus(corpus: &[LabeledImage], ratio: SplitRatio, seed: u64) -> Result<SplitManifest> {
    if ratio.train == 0 || ratio.total() == 0 {
        return Err(Error::Param(format!("invalid split ratio {ratio:?}")));
    }
    let mut labels = BTreeMap::new();
    for li in corpus {
        if labels.insert(li.id.clone(), li.label).is_some() {
            return Err(Error::Param(format!("duplicate id `{}`", li.id)));
        }
    }
    let mut m = SplitManifest {
        root: None,
        seed,
        ratio,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        labels,
        counts: BTreeMap::new(),
        config_digest: None,
    };
    for label in ClassLabel::ALL {
        let mut ids: Vec<&String> = corpus.iter().filter(|l| l.label == label).map(|l| &l.id).collect();
        if ids.len() < ratio.total() {
            return Err(Error::Degenerate(format!(
                "class {label} has {} samples, at least {} needed",
                ids.len(),
                ratio.total()
            )));
        }
        ids.sort();
        ids.shuffle(&mut rng::derive(seed, "split", label.index() as u64));
        let c = ratio.allocate(ids.len());
        m.train.extend(ids[..c.train].iter().map(|s| s.to_string()));
        m.val
            .extend(ids[c.train..c.train + c.val].iter().map(|s| s.to_string()));
        m.test.extend(ids[c.train + c.val..].iter().map(|s| s.to_string()));
        m.counts.insert(label, c);
    }
    m.train.sort();
    m.val.sort();
    m.test.sort();
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::RgbImage;

    fn corpus(nb: usize, nm: usize) -> Vec<LabeledImage> {
        let img = RgbImage::filled(1, 1, [0.5; 3]);
        let mk = |label: ClassLabel, i: usize| LabeledImage {
            id: format!("{}/{i:04}.png", label.as_str()),
            label,
            image: img.clone(),
        };
        (0..nb)
            .map(|i| mk(ClassLabel::Benign, i))
            .chain((0..nm).map(|i| mk(ClassLabel::Malignant, i)))
            .collect()
    }

    #[test]
    fn five_per_class() {
        let m = split_corpus(&corpus(5, 5), SplitRatio::default(), 1).unwrap();
        for l in ClassLabel::ALL {
            assert_eq!(
                m.counts[&l],
                SplitCounts {
                    train: 3,
                    val: 1,
                    test: 1
                }
            );
        }
        m.validate().unwrap();
    }

    #[test]
    fn remainder_goes_to_test() {
        let m = split_corpus(&corpus(77, 79), SplitRatio::default(), 3).unwrap();
        assert_eq!(
            m.counts[&ClassLabel::Benign],
            SplitCounts {
                train: 46,
                val: 15,
                test: 16
            }
        );
        assert_eq!(
            m.counts[&ClassLabel::Malignant],
            SplitCounts {
                train: 47,
                val: 15,
                test: 17
            }
        );
        m.validate().unwrap();
    }

    #[test]
    fn too_small_class() {
        assert!(matches!(
            split_corpus(&corpus(4, 9), SplitRatio::default(), 0),
            Err(Error::Degenerate(_))
        ));
        assert!(split_corpus(&corpus(9, 0), SplitRatio::default(), 0).is_err());
    }

    #[test]
    fn seed_controls_assignment() {
        let c = corpus(20, 20);
        let a = split_corpus(&c, SplitRatio::default(), 7).unwrap();
        assert_eq!(a, split_corpus(&c, SplitRatio::default(), 7).unwrap());
        let distinct: BTreeSet<Vec<String>> = (0..100)
            .map(|s| split_corpus(&c, SplitRatio::default(), s).unwrap().train)
            .collect();
        assert_eq!(distinct.len(), 100);
    }

    #[test]
    fn json_round_trip() {
        let m = split_corpus(&corpus(6, 7), SplitRatio::default(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("split.json");
        m.save(&p).unwrap();
        assert_eq!(SplitManifest::load(&p).unwrap(), m);
    }

    #[test]
    fn validate_catches_overlap() {
        let mut m = split_corpus(&corpus(5, 5), SplitRatio::default(), 0).unwrap();
        let dup = m.train[0].clone();
        m.test.push(dup);
        assert!(matches!(m.validate(), Err(Error::Contract(_))));
    }
}
