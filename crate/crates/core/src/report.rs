//! Report artifacts: accuracy tables, image/mask grids, synthetic sample
//! grids and loss-curve plots, each checked against its manifest digest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checkpoint;
use crate::classify::AblationReport;
use crate::data::load_corpus;
use crate::error::{Error, Result};
use crate::imaging::{load_mask_png, load_rgb_png, save_rgb_png, BinaryMask, RgbImage};
use crate::label::ClassLabel;
use crate::synthesis::{SynthManifest, MASK_DIR};

const PAD: usize = 2;
const BACKGROUND: [f32; 3] = [1.0, 1.0, 1.0];

/// Mask rendered as black background with white foreground.
pub fn mask_to_rgb(mask: &BinaryMask) -> RgbImage {
    RgbImage::from_fn(
        mask.height(),
        mask.width(),
        |_, y, x| if mask.get(y, x) { 1.0 } else { 0.0 },
    )
}

/// Tiles placed left to right with `PAD` white pixels between them.
pub fn hconcat(tiles: &[RgbImage]) -> Result<RgbImage> {
    let h = tiles
        .first()
        .ok_or_else(|| Error::Param("nothing to concatenate".into()))?
        .height();
    if tiles.iter().any(|t| t.height() != h) {
        return Err(Error::Shape("tiles differ in height".into()));
    }
    let w = tiles.iter().map(RgbImage::width).sum::<usize>() + PAD * (tiles.len() - 1);
    let mut starts = Vec::new();
    let mut x0 = 0;
    for t in tiles {
        starts.push(x0);
        x0 += t.width() + PAD;
    }
    Ok(RgbImage::from_fn(h, w, |c, y, x| {
        for (t, &s) in tiles.iter().zip(&starts) {
            if x >= s && x < s + t.width() {
                return t.get(c, y, x - s);
            }
        }
        BACKGROUND[c]
    }))
}

/// `rows x cols` grid of equally sized tiles in row-major order, with a
/// `PAD`-pixel white border around every tile. Missing tiles stay blank.
pub fn tile_grid(tiles: &[RgbImage], rows: usize, cols: usize) -> Result<RgbImage> {
    if rows == 0 || cols == 0 {
        return Err(Error::Param(format!("grid {rows}x{cols} is empty")));
    }
    let first = tiles.first().ok_or_else(|| Error::Param("no tiles".into()))?;
    let (th, tw) = first.dims();
    if tiles.iter().any(|t| t.dims() != (th, tw)) {
        return Err(Error::Shape("tiles differ in size".into()));
    }
    if tiles.len() > rows * cols {
        return Err(Error::Param(format!(
            "{} tiles do not fit a {rows}x{cols} grid",
            tiles.len()
        )));
    }
    let (ch, cw) = (th + PAD, tw + PAD);
    Ok(RgbImage::from_fn(rows * ch + PAD, cols * cw + PAD, |c, y, x| {
        if y < PAD || x < PAD {
            return BACKGROUND[c];
        }
        let (r, ty) = ((y - PAD) / ch, (y - PAD) % ch);
        let (k, tx) = ((x - PAD) / cw, (x - PAD) % cw);
        match tiles.get(r * cols + k) {
            Some(t) if ty < th && tx < tw => t.get(c, ty, tx),
            _ => BACKGROUND[c],
        }
    }))
}

const PALETTE: [[f32; 3]; 6] = [
    [0.85, 0.10, 0.10],
    [0.10, 0.35, 0.85],
    [0.10, 0.60, 0.20],
    [0.80, 0.50, 0.05],
    [0.55, 0.15, 0.70],
    [0.20, 0.20, 0.20],
];

/// Line plot of each series against its index on a shared y range, with a
/// light frame. Colours follow the series order.
pub fn plot_series(series: &[(&str, &[f64])], height: usize, width: usize) -> Result<RgbImage> {
    if height < 16 || width < 16 {
        return Err(Error::Param(format!("plot {height}x{width} too small")));
    }
    let finite = || {
        series
            .iter()
            .flat_map(|(_, s)| s.iter().copied())
            .filter(|v| v.is_finite())
    };
    let lo = finite().fold(f64::INFINITY, f64::min);
    let hi = finite().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return Err(Error::Degenerate("no finite values to plot".into()));
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let m = 6usize;
    let (pw, ph) = ((width - 2 * m - 1) as f64, (height - 2 * m - 1) as f64);
    let mut buf = vec![BACKGROUND; height * width];
    for x in m..width - m {
        buf[m * width + x] = [0.7; 3];
        buf[(height - m - 1) * width + x] = [0.7; 3];
    }
    for y in m..height - m {
        buf[y * width + m] = [0.7; 3];
        buf[y * width + width - m - 1] = [0.7; 3];
    }
    for (si, (_, s)) in series.iter().enumerate() {
        let colour = PALETTE[si % PALETTE.len()];
        let n = s.len().max(2) - 1;
        let pt = |i: usize, v: f64| {
            let x = m as f64 + pw * i as f64 / n as f64;
            let y = m as f64 + ph * (1.0 - (v - lo) / span);
            (x.round() as i64, y.round() as i64)
        };
        let mut prev: Option<(i64, i64)> = None;
        for (i, v) in s.iter().enumerate() {
            if !v.is_finite() {
                prev = None;
                continue;
            }
            let p = pt(i, *v);
            let from = prev.unwrap_or(p);
            let steps = (p.0 - from.0).abs().max((p.1 - from.1).abs()).max(1);
            for t in 0..=steps {
                let x = from.0 + (p.0 - from.0) * t / steps;
                let y = from.1 + (p.1 - from.1) * t / steps;
                if (0..width as i64).contains(&x) && (0..height as i64).contains(&y) {
                    buf[y as usize * width + x as usize] = colour;
                }
            }
            prev = Some(p);
        }
    }
    Ok(RgbImage::from_fn(height, width, |c, y, x| buf[y * width + x][c]))
}

/// Numeric per-epoch series of a checkpoint manifest's `log`, keyed by field.
fn log_series(manifest: &Value) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    if let Some(entries) = manifest.get("log").and_then(Value::as_array) {
        for e in entries {
            if let Some(obj) = e.as_object() {
                for (k, v) in obj {
                    if k == "epoch" || k == "flips" {
                        continue;
                    }
                    if let Some(x) = v.as_f64() {
                        out.entry(k.clone()).or_default().push(x);
                    }
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct ReportInputs {
    /// JSON written by `ablate`.
    pub results: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    /// Extracted masks laid out like the corpus.
    pub masks: Option<PathBuf>,
    pub synthetic: Option<PathBuf>,
    /// Checkpoint blobs whose manifests carry training logs.
    pub checkpoints: Vec<PathBuf>,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub file: String,
    pub sha256: String,
    /// Artifacts (path -> digest) the file was built from.
    pub sources: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportManifest {
    pub entries: Vec<ReportEntry>,
}

pub const REPORT_MANIFEST: &str = "report.json";

struct Writer<'a> {
    dir: &'a Path,
    overwrite: bool,
    entries: Vec<ReportEntry>,
}

impl Writer<'_> {
    fn target(&self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        checkpoint::check_writable(&p, self.overwrite)?;
        Ok(p)
    }

    fn record(&mut self, name: &str, sources: BTreeMap<String, String>) -> Result<()> {
        let sha256 = checkpoint::file_digest(&self.dir.join(name))?;
        self.entries.push(ReportEntry {
            file: name.to_string(),
            sha256,
            sources,
        });
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str, sources: &BTreeMap<String, String>) -> Result<()> {
        let p = self.target(name)?;
        checkpoint::write_file(&p, body.as_bytes())?;
        self.record(name, sources.clone())
    }

    fn png(&mut self, name: &str, img: &RgbImage, sources: &BTreeMap<String, String>) -> Result<()> {
        let p = self.target(name)?;
        save_rgb_png(img, &p)?;
        self.record(name, sources.clone())
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Checks every input before writing anything: missing files and digest
/// mismatches are reported together.
fn audit(inputs: &ReportInputs) -> Result<(Option<AblationReport>, Option<SynthManifest>, Vec<(PathBuf, Value)>)> {
    let mut problems = Vec::new();
    let results =
        inputs
            .results
            .as_ref()
            .and_then(|p| match AblationReport::load(p).and_then(|r| r.verify().map(|_| r)) {
                Ok(r) => Some(r),
                Err(e) => {
                    problems.push(format!("{}: {e}", p.display()));
                    None
                }
            });
    let synthetic =
        inputs
            .synthetic
            .as_ref()
            .and_then(|d| match SynthManifest::load(d).and_then(|m| m.verify(d).map(|_| m)) {
                Ok(m) => Some(m),
                Err(e) => {
                    problems.push(format!("{}: {e}", d.display()));
                    None
                }
            });
    if inputs.corpus.is_some() != inputs.masks.is_some() {
        problems.push("image/mask grid needs both a corpus and a mask directory".into());
    }
    let mut ckpts = Vec::new();
    for p in &inputs.checkpoints {
        let loaded = checkpoint::read_json::<Value>(&checkpoint::manifest_path(p)).and_then(|m| {
            let want = m
                .get("blob_sha256")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string();
            let got = checkpoint::file_digest(p)?;
            if got == want {
                Ok(m)
            } else {
                Err(Error::Checkpoint(format!("blob digest {got} != manifest {want}")))
            }
        });
        match loaded {
            Ok(m) => ckpts.push((p.clone(), m)),
            Err(e) => problems.push(format!("{}: {e}", p.display())),
        }
    }
    if problems.is_empty() {
        Ok((results, synthetic, ckpts))
    } else {
        Err(Error::Load(problems))
    }
}

/// Writes the report bundle into `out` and returns its manifest.
pub fn emit_report(inputs: &ReportInputs, out: &Path, overwrite: bool) -> Result<ReportManifest> {
    if inputs.rows == 0 || inputs.cols == 0 {
        return Err(Error::Param("grid rows and cols must be >= 1".into()));
    }
    let (results, synthetic, ckpts) = audit(inputs)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut w = Writer {
        dir: out,
        overwrite,
        entries: Vec::new(),
    };
    checkpoint::check_writable(&out.join(REPORT_MANIFEST), overwrite)?;

    if let (Some(r), Some(p)) = (&results, &inputs.results) {
        let src = BTreeMap::from([(display(p), checkpoint::file_digest(p)?)]);
        w.text("accuracy.csv", &r.table.to_csv()?, &src)?;
        w.text("accuracy.txt", &r.table.to_text(), &src)?;
    }

    if let (Some(corpus), Some(masks)) = (&inputs.corpus, &inputs.masks) {
        let images = load_corpus(corpus)?;
        let per_class = (inputs.rows * inputs.cols).div_ceil(2);
        let mut tiles = Vec::new();
        let mut src = BTreeMap::new();
        for label in ClassLabel::ALL {
            for li in images.iter().filter(|i| i.label == label).take(per_class) {
                if tiles.len() == inputs.rows * inputs.cols {
                    break;
                }
                let mpath = masks.join(&li.id);
                let mask = load_mask_png(&mpath)?;
                src.insert(
                    display(&corpus.join(&li.id)),
                    checkpoint::file_digest(&corpus.join(&li.id))?,
                );
                src.insert(display(&mpath), checkpoint::file_digest(&mpath)?);
                tiles.push(hconcat(&[li.image.clone(), mask_to_rgb(&mask)])?);
            }
        }
        w.png(
            "image_mask_grid.png",
            &tile_grid(&tiles, inputs.rows, inputs.cols)?,
            &src,
        )?;
    }

    if let (Some(m), Some(dir)) = (&synthetic, &inputs.synthetic) {
        for label in ClassLabel::ALL {
            let mut tiles = Vec::new();
            let mut src = BTreeMap::new();
            for s in m
                .samples
                .iter()
                .filter(|s| s.label == label)
                .take(inputs.rows * inputs.cols)
            {
                let img = load_rgb_png(&dir.join(&s.id))?;
                src.insert(display(&dir.join(&s.id)), s.image_sha256.clone());
                let tile = match &s.mask_sha256 {
                    Some(d) => {
                        let mp = dir.join(MASK_DIR).join(&s.id);
                        src.insert(display(&mp), d.clone());
                        hconcat(&[mask_to_rgb(&load_mask_png(&mp)?), img])?
                    }
                    None => img,
                };
                tiles.push(tile);
            }
            if !tiles.is_empty() {
                w.png(
                    &format!("synthetic_{label}.png"),
                    &tile_grid(&tiles, inputs.rows, inputs.cols)?,
                    &src,
                )?;
            }
        }
    }

    for (path, manifest) in &ckpts {
        let series = log_series(manifest);
        if series.is_empty() {
            continue;
        }
        let stem = path
            .file_stem()
            .map_or_else(|| "checkpoint".into(), |s| s.to_string_lossy().into_owned());
        let src = BTreeMap::from([(display(path), checkpoint::file_digest(path)?)]);
        let refs: Vec<(&str, &[f64])> = series.iter().map(|(k, v)| (k.as_str(), v.as_slice())).collect();
        w.png(&format!("loss_{stem}.png"), &plot_series(&refs, 240, 400)?, &src)?;
        let mut csv = csv::Writer::from_writer(Vec::new());
        let wr = |e: csv::Error| Error::Config(format!("loss csv: {e}"));
        csv.write_record(std::iter::once("epoch").chain(series.keys().map(String::as_str)))
            .map_err(wr)?;
        let n = series.values().map(Vec::len).max().unwrap_or(0);
        for i in 0..n {
            let row = std::iter::once(i.to_string())
                .chain(series.values().map(|v| v.get(i).map_or(String::new(), f64::to_string)));
            csv.write_record(row).map_err(wr)?;
        }
        let body = csv.into_inner().map_err(|e| Error::Config(format!("loss csv: {e}")))?;
        w.text(
            &format!("loss_{stem}.csv"),
            &String::from_utf8(body).expect("utf-8"),
            &src,
        )?;
    }

    let manifest = ReportManifest { entries: w.entries };
    checkpoint::write_json(&out.join(REPORT_MANIFEST), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(h: usize, w: usize, v: f32) -> RgbImage {
        RgbImage::filled(h, w, [v; 3])
    }

    #[test]
    fn grid_dimensions_follow_rows_and_cols() {
        let tiles: Vec<_> = (0..5).map(|i| solid(6, 4, i as f32 / 5.0)).collect();
        let g = tile_grid(&tiles, 2, 3).unwrap();
        assert_eq!(g.dims(), (2 * (6 + PAD) + PAD, 3 * (4 + PAD) + PAD));
        // Tile (1, 1) is the fifth tile.
        assert_eq!(g.get(0, PAD + (6 + PAD) + 1, PAD + (4 + PAD) + 1), 0.8);
        assert!(tile_grid(&tiles, 2, 2).is_err());
        assert!(tile_grid(&[solid(6, 4, 0.), solid(5, 4, 0.)], 1, 2).is_err());
    }

    #[test]
    fn hconcat_places_tiles_side_by_side() {
        let h = hconcat(&[solid(3, 2, 0.0), solid(3, 5, 1.0)]).unwrap();
        assert_eq!(h.dims(), (3, 2 + PAD + 5));
        assert_eq!(h.get(1, 1, 1), 0.0);
        assert_eq!(h.get(1, 1, 2 + PAD), 1.0);
    }

    #[test]
    fn plot_marks_the_extremes() {
        let s = [3.0, 1.0, 2.0];
        let img = plot_series(&[("loss", &s)], 40, 60).unwrap();
        assert_eq!(img.dims(), (40, 60));
        // Maximum at the top-left corner of the plot area.
        assert_eq!(img.pixel(6, 6), PALETTE[0]);
        assert!(plot_series(&[("nan", &[f64::NAN])], 40, 60).is_err());
    }

    #[test]
    fn missing_artifacts_are_itemised() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = ReportInputs {
            results: Some(dir.path().join("nope.json")),
            synthetic: Some(dir.path().join("nosynth")),
            checkpoints: vec![dir.path().join("x.bin")],
            rows: 1,
            cols: 1,
            ..Default::default()
        };
        match emit_report(&inputs, &dir.path().join("out"), false) {
            Err(Error::Load(items)) => assert_eq!(items.len(), 3),
            other => panic!("{other:?}"),
        }
    }
}
