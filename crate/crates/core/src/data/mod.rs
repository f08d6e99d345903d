//! Corpus loading, stratified splitting, classical augmentation and the
//! procedural toy corpus.

mod augment;
mod split;
mod toy;

pub use augment::{hflip, rotate, traditional_augment, vflip, AugmentParams};
pub use split::{split_corpus, SplitCounts, SplitManifest, SplitRatio, Subset};
pub use toy::{generate_toy_corpus, NucleiStyle, ToyCorpusConfig};

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{load_mask_png, load_rgb_png, save_mask_png, save_rgb_png, BinaryMask, RgbImage};
use crate::label::ClassLabel;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    /// Path relative to the corpus root, e.g. `benign/0007.png`.
    pub id: String,
    pub label: ClassLabel,
    pub image: RgbImage,
}

/// Sorted `.png` file names directly inside `dir`.
pub fn list_pngs(dir: &Path) -> Result<Vec<String>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let is_png = Path::new(&name)
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && entry.path().is_file() {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Reads `root/{benign,malignant}/*.png` in lexicographic id order.
/// Every problem (missing or empty class directory, undecodable file) is
/// collected into one itemised error.
pub fn load_corpus(root: &Path) -> Result<Vec<LabeledImage>> {
    let mut out = Vec::new();
    let mut problems = Vec::new();
    for label in ClassLabel::ALL {
        let dir = root.join(label.as_str());
        let names = match list_pngs(&dir) {
            Ok(n) if n.is_empty() => {
                problems.push(format!("{}: no .png files", dir.display()));
                continue;
            }
            Ok(n) => n,
            Err(e) => {
                problems.push(e.to_string());
                continue;
            }
        };
        for name in names {
            let id = format!("{}/{name}", label.as_str());
            match load_rgb_png(&root.join(&id)) {
                Ok(image) => out.push(LabeledImage { id, label, image }),
                Err(e) => problems.push(e.to_string()),
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::Load(problems));
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Keeps the first `cap` ids (lexicographically) of each class.
pub fn cap_per_class(corpus: Vec<LabeledImage>, cap: usize) -> Vec<LabeledImage> {
    let mut seen = [0usize; 2];
    let mut sorted = corpus;
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    sorted
        .into_iter()
        .filter(|li| {
            let n = &mut seen[li.label.index()];
            *n += 1;
            *n <= cap
        })
        .collect()
}

/// Writes each image to `root/{id}`.
pub fn write_corpus(root: &Path, images: &[LabeledImage]) -> Result<()> {
    for li in images {
        save_rgb_png(&li.image, &root.join(&li.id))?;
    }
    Ok(())
}

/// Writes masks under `dir` using the same relative ids as their images.
pub fn write_masks<'a>(dir: &Path, items: impl IntoIterator<Item = (&'a str, &'a BinaryMask)>) -> Result<()> {
    for (id, m) in items {
        save_mask_png(m, &dir.join(id))?;
    }
    Ok(())
}

/// Loads `dir/{id}` for each id, collecting failures.
pub fn load_masks(dir: &Path, ids: &[&str]) -> Result<Vec<BinaryMask>> {
    let mut out = Vec::with_capacity(ids.len());
    let mut problems = Vec::new();
    for id in ids {
        match load_mask_png(&dir.join(id)) {
            Ok(m) => out.push(m),
            Err(e) => problems.push(e.to_string()),
        }
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(Error::Load(problems))
    }
}
