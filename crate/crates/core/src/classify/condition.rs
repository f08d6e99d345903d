use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{LabeledImage, SplitManifest, Subset};
use crate::error::{Error, Result};
use crate::imaging::{load_rgb_png, RgbImage};
use crate::label::ClassLabel;
use crate::synthesis::SynthManifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ingredient {
    Orig,
    Trad,
    Prop,
    Gan,
}

impl Ingredient {
    pub fn as_str(self) -> &'static str {
        match self {
            Ingredient::Orig => "orig",
            Ingredient::Trad => "trad",
            Ingredient::Prop => "prop",
            Ingredient::Gan => "gan",
        }
    }

    /// Id prefix of images contributed by a synthetic ingredient.
    pub fn prefix(self) -> Option<&'static str> {
        match self {
            Ingredient::Prop => Some("prop:"),
            Ingredient::Gan => Some("gan:"),
            _ => None,
        }
    }
}

impl FromStr for Ingredient {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "orig" => Ok(Ingredient::Orig),
            "trad" => Ok(Ingredient::Trad),
            "prop" => Ok(Ingredient::Prop),
            "gan" => Ok(Ingredient::Gan),
            other => Err(Error::Param(format!("unknown condition ingredient `{other}`"))),
        }
    }
}

/// A training-set composition such as `orig+trad+prop`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub ingredients: BTreeSet<Ingredient>,
}

impl Condition {
    pub fn parse(name: &str) -> Result<Self> {
        let ingredients = name
            .split('+')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<BTreeSet<_>>>()?;
        let c = Self {
            name: name.trim().to_string(),
            ingredients,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ingredients.is_empty() {
            return Err(Error::Param(format!("condition `{}` has no ingredients", self.name)));
        }
        if self.has(Ingredient::Trad) && !self.has(Ingredient::Orig) {
            return Err(Error::Param(format!(
                "condition `{}`: trad transforms originals and needs orig",
                self.name
            )));
        }
        Ok(())
    }

    pub fn has(&self, i: Ingredient) -> bool {
        self.ingredients.contains(&i)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainItem {
    /// Split id for originals, `prop:`/`gan:`-prefixed manifest id otherwise.
    pub id: String,
    pub label: ClassLabel,
    pub source: Ingredient,
    /// Receives random traditional transforms each time it is drawn.
    pub transform: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub condition: Condition,
    pub items: Vec<TrainItem>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count(&self, source: Ingredient) -> usize {
        self.items.iter().filter(|i| i.source == source).count()
    }
}

fn synthetic_items(
    out: &mut Vec<TrainItem>,
    cond: &Condition,
    which: Ingredient,
    manifest: Option<&SynthManifest>,
) -> Result<()> {
    if !cond.has(which) {
        return Ok(());
    }
    let m = manifest.ok_or_else(|| {
        Error::Load(vec![format!(
            "condition `{}` needs a {} manifest",
            cond.name,
            which.as_str()
        )])
    })?;
    let prefix = which.prefix().expect("synthetic ingredient");
    out.extend(m.samples.iter().map(|s| TrainItem {
        id: format!("{prefix}{}", s.id),
        label: s.label,
        source: which,
        transform: false,
    }));
    Ok(())
}

/// Training items for `cond`: the train split first (in manifest order),
/// then proposed and GAN-baseline samples. Validation and test are never
/// part of the result.
pub fn assemble_condition(
    split: &SplitManifest,
    cond: &Condition,
    prop: Option<&SynthManifest>,
    gan: Option<&SynthManifest>,
) -> Result<TrainingSet> {
    cond.validate()?;
    let mut items = Vec::new();
    if cond.has(Ingredient::Orig) {
        for id in &split.train {
            let label = split
                .label(id)
                .ok_or_else(|| Error::Contract(format!("split manifest has no label for `{id}`")))?;
            items.push(TrainItem {
                id: id.clone(),
                label,
                source: Ingredient::Orig,
                transform: cond.has(Ingredient::Trad),
            });
        }
    }
    synthetic_items(&mut items, cond, Ingredient::Prop, prop)?;
    synthetic_items(&mut items, cond, Ingredient::Gan, gan)?;
    Ok(TrainingSet {
        condition: cond.clone(),
        items,
    })
}

/// Id-level check that nothing synthetic or transformed can reach the
/// evaluation subsets and that every original comes from the train split.
pub fn audit_leakage(split: &SplitManifest, set: &TrainingSet) -> Result<()> {
    let held_out: BTreeSet<&str> = split.val.iter().chain(&split.test).map(String::as_str).collect();
    let mut problems = Vec::new();
    for it in &set.items {
        if held_out.contains(it.id.as_str()) {
            problems.push(format!("{}: `{}` is a validation/test id", set.condition, it.id));
        }
        match it.source {
            Ingredient::Orig => {
                if split.subset_of(&it.id) != Some(Subset::Train) {
                    problems.push(format!(
                        "{}: original `{}` is not in the train split",
                        set.condition, it.id
                    ));
                }
            }
            s => {
                let prefix = s.prefix().unwrap_or("");
                if !it.id.starts_with(prefix) || prefix.is_empty() {
                    problems.push(format!(
                        "{}: synthetic id `{}` lacks its `{prefix}` prefix",
                        set.condition, it.id
                    ));
                }
                if it.transform {
                    problems.push(format!(
                        "{}: synthetic `{}` marked for transforms",
                        set.condition, it.id
                    ));
                }
            }
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Contract(problems.join("; ")))
    }
}

/// Images keyed by training/evaluation id.
#[derive(Clone, Debug, Default)]
pub struct ImageBank {
    images: BTreeMap<String, RgbImage>,
}

impl ImageBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_corpus(corpus: &[LabeledImage]) -> Self {
        Self {
            images: corpus.iter().map(|i| (i.id.clone(), i.image.clone())).collect(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, image: RgbImage) {
        self.images.insert(id.into(), image);
    }

    pub fn get(&self, id: &str) -> Result<&RgbImage> {
        self.images
            .get(id)
            .ok_or_else(|| Error::Load(vec![format!("no image for id `{id}`")]))
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Loads every id of the split from `root`.
    pub fn load_split(split: &SplitManifest, root: &Path) -> Result<Self> {
        let mut bank = Self::new();
        let mut errors = Vec::new();
        for id in split.train.iter().chain(&split.val).chain(&split.test) {
            match load_rgb_png(&root.join(id)) {
                Ok(img) => bank.insert(id.clone(), img),
                Err(e) => errors.push(e.to_string()),
            }
        }
        if errors.is_empty() {
            Ok(bank)
        } else {
            Err(Error::Load(errors))
        }
    }

    /// Verifies the manifest digests, then loads its images under `which`'s prefix.
    pub fn add_synthetic(&mut self, which: Ingredient, dir: &Path, manifest: &SynthManifest) -> Result<()> {
        let prefix = which
            .prefix()
            .ok_or_else(|| Error::Param(format!("{} is not a synthetic ingredient", which.as_str())))?;
        manifest.verify(dir)?;
        for s in &manifest.samples {
            self.insert(format!("{prefix}{}", s.id), load_rgb_png(&dir.join(&s.id))?);
        }
        Ok(())
    }
}
