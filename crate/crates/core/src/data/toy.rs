use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledImage;
use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, RgbImage};
use crate::label::ClassLabel;
use crate::rng::{self, Rng};

/// Per-class nucleus geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NucleiStyle {
    /// Inclusive range of nuclei per image.
    pub count: [usize; 2],
    /// Range of ellipse semi-axis lengths in pixels.
    pub semi_axis: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyCorpusConfig {
    pub n_per_class: usize,
    pub image_size: usize,
    pub benign: NucleiStyle,
    pub malignant: NucleiStyle,
    /// Std of the per-pixel chromatin texture inside nuclei.
    pub chromatin_noise: f64,
    pub nucleus_color: [f64; 3],
    pub background: [f64; 3],
    /// Amplitude of the smooth background variation.
    pub background_texture: f64,
    pub pixel_noise: f64,
    pub red_cell_color: [f64; 3],
    pub red_cell_count: [usize; 2],
    pub red_cell_radius: [f64; 2],
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            n_per_class: 75,
            image_size: 64,
            benign: NucleiStyle {
                count: [2, 4],
                semi_axis: [2.5, 4.0],
            },
            malignant: NucleiStyle {
                count: [5, 8],
                semi_axis: [4.5, 7.0],
            },
            chromatin_noise: 0.04,
            nucleus_color: [0.36, 0.17, 0.50],
            background: [0.94, 0.80, 0.86],
            background_texture: 0.02,
            pixel_noise: 0.006,
            red_cell_color: [0.86, 0.36, 0.42],
            red_cell_count: [2, 5],
            red_cell_radius: [3.0, 4.5],
            seed: 0,
        }
    }
}

impl ToyCorpusConfig {
    pub fn style(&self, label: ClassLabel) -> &NucleiStyle {
        match label {
            ClassLabel::Benign => &self.benign,
            ClassLabel::Malignant => &self.malignant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_per_class == 0 {
            return bad("n_per_class must be >= 1".into());
        }
        if self.image_size < 8 {
            return bad(format!("image_size {} below 8", self.image_size));
        }
        for (name, s) in [("benign", &self.benign), ("malignant", &self.malignant)] {
            if s.count[0] > s.count[1] || s.count[1] == 0 {
                return bad(format!("{name}: nuclei count range {:?} is empty", s.count));
            }
            if !(s.semi_axis[0] > 0.0 && s.semi_axis[0] <= s.semi_axis[1]) {
                return bad(format!("{name}: semi-axis range {:?} is invalid", s.semi_axis));
            }
        }
        if self.benign == self.malignant {
            return bad("benign and malignant nuclei styles must differ".into());
        }
        if self.red_cell_count[0] > self.red_cell_count[1]
            || !(self.red_cell_radius[0] > 0.0 && self.red_cell_radius[0] <= self.red_cell_radius[1])
        {
            return bad("red cell ranges are invalid".into());
        }
        let colors = [self.nucleus_color, self.background, self.red_cell_color];
        if colors.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("colours must lie in [0, 1]".into());
        }
        for v in [self.chromatin_noise, self.background_texture, self.pixel_noise] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad("noise levels must be finite and >= 0".into());
            }
        }
        Ok(())
    }
}

/// Renders `n_per_class` images per class with their exact nuclei masks.
/// Ids are `{class}/{index:04}.png`; benign first, in index order.
pub fn generate_toy_corpus(cfg: &ToyCorpusConfig) -> Result<(Vec<LabeledImage>, Vec<BinaryMask>)> {
    cfg.validate()?;
    let mut images = Vec::with_capacity(2 * cfg.n_per_class);
    let mut masks = Vec::with_capacity(2 * cfg.n_per_class);
    for label in ClassLabel::ALL {
        for i in 0..cfg.n_per_class {
            let idx = (label.index() * cfg.n_per_class + i) as u64;
            let (image, mask) = render(cfg, label, &mut rng::derive(cfg.seed, "toy-image", idx));
            images.push(LabeledImage {
                id: format!("{}/{i:04}.png", label.as_str()),
                label,
                image,
            });
            masks.push(mask);
        }
    }
    Ok((images, masks))
}

fn uniform(rng: &mut Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Smooth field in roughly `[-1, 1]`: bilinear interpolation of a coarse random grid.
fn smooth_field(rng: &mut Rng, size: usize, cells: usize) -> Vec<f64> {
    let g = cells + 1;
    let grid: Vec<f64> = (0..g * g).map(|_| rng.random_range(-1.0..1.0)).collect();
    let scale = cells as f64 / size as f64;
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let fy = (y as f64 + 0.5) * scale;
        let y0 = (fy.floor() as usize).min(cells - 1);
        let ty = fy - y0 as f64;
        for x in 0..size {
            let fx = (x as f64 + 0.5) * scale;
            let x0 = (fx.floor() as usize).min(cells - 1);
            let tx = fx - x0 as f64;
            let at = |yy: usize, xx: usize| grid[yy * g + xx];
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
            let bot = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

fn render(cfg: &ToyCorpusConfig, label: ClassLabel, rng: &mut Rng) -> (RgbImage, BinaryMask) {
    let s = cfg.image_size;
    let sf = s as f64;
    let texture = smooth_field(rng, s, 4);
    let pixel = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rgb = vec![[0.0f64; 3]; s * s];
    for (i, px) in rgb.iter_mut().enumerate() {
        let t = texture[i] * cfg.background_texture;
        for c in 0..3 {
            px[c] = cfg.background[c] + t + cfg.pixel_noise * pixel.sample(rng);
        }
    }

    let n_red = rng.random_range(cfg.red_cell_count[0]..=cfg.red_cell_count[1]);
    for _ in 0..n_red {
        let (cy, cx) = (rng.random_range(0.0..sf), rng.random_range(0.0..sf));
        let r = uniform(rng, cfg.red_cell_radius);
        for_each_in_bbox(s, cy, cx, r, |y, x, dy, dx| {
            let d = (dy * dy + dx * dx).sqrt();
            if d <= r {
                // central pallor
                let pale = if d < 0.45 * r { 0.12 } else { 0.0 };
                let px = &mut rgb[y * s + x];
                for c in 0..3 {
                    px[c] = cfg.red_cell_color[c]
                        + pale * (cfg.background[c] - cfg.red_cell_color[c])
                        + cfg.pixel_noise * pixel.sample(rng);
                }
            }
        });
    }

    let style = cfg.style(label);
    let n_nuclei = rng.random_range(style.count[0]..=style.count[1]);
    let mut mask = BinaryMask::zeros(s, s);
    let chromatin = smooth_field(rng, s, (s / 4).max(1));
    for _ in 0..n_nuclei {
        let (cy, cx) = (rng.random_range(0.0..sf), rng.random_range(0.0..sf));
        let a = uniform(rng, style.semi_axis);
        let b = uniform(rng, style.semi_axis);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let (sin, cos) = theta.sin_cos();
        for_each_in_bbox(s, cy, cx, a.max(b), |y, x, dy, dx| {
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                let grain = cfg.chromatin_noise * (0.6 * chromatin[y * s + x] + 0.8 * pixel.sample(rng));
                let px = &mut rgb[y * s + x];
                for c in 0..3 {
                    px[c] = cfg.nucleus_color[c] + grain;
                }
                mask.set(y, x, true);
            }
        });
    }

    let img = RgbImage::from_fn(s, s, |c, y, x| rgb[y * s + x][c] as f32);
    (img, mask)
}

/// Visits pixels whose centres fall in the square of half-side `r` around `(cy, cx)`.
fn for_each_in_bbox(s: usize, cy: f64, cx: f64, r: f64, mut f: impl FnMut(usize, usize, f64, f64)) {
    let lo = |c: f64| (c - r - 0.5).floor().max(0.0) as usize;
    let hi = |c: f64| ((c + r + 0.5).ceil().max(0.0) as usize).min(s);
    for y in lo(cy)..hi(cy) {
        for x in lo(cx)..hi(cx) {
            f(y, x, y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToyCorpusConfig {
        ToyCorpusConfig {
            n_per_class: 6,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_toy_corpus(&small()).unwrap();
        let b = generate_toy_corpus(&small()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = generate_toy_corpus(&ToyCorpusConfig { seed: 9, ..small() }).unwrap();
        assert_ne!(a.0[0].image, c.0[0].image);
    }

    #[test]
    fn mask_marks_nucleus_coloured_pixels() {
        let cfg = ToyCorpusConfig {
            chromatin_noise: 0.0,
            pixel_noise: 0.0,
            ..small()
        };
        let (imgs, masks) = generate_toy_corpus(&cfg).unwrap();
        for (li, m) in imgs.iter().zip(&masks) {
            assert!(m.count() > 0);
            for y in 0..cfg.image_size {
                for x in 0..cfg.image_size {
                    let p = li.image.pixel(y, x);
                    let is_nucleus = (0..3).all(|c| (f64::from(p[c]) - cfg.nucleus_color[c]).abs() < 1e-6);
                    assert_eq!(m.get(y, x), is_nucleus, "{} at ({y},{x})", li.id);
                }
            }
        }
    }

    #[test]
    fn classes_differ_in_nuclei_load() {
        let (imgs, masks) = generate_toy_corpus(&ToyCorpusConfig {
            n_per_class: 30,
            ..Default::default()
        })
        .unwrap();
        let mean = |l: ClassLabel| {
            let f: Vec<f64> = imgs
                .iter()
                .zip(&masks)
                .filter(|(i, _)| i.label == l)
                .map(|(_, m)| m.foreground_fraction())
                .collect();
            f.iter().sum::<f64>() / f.len() as f64
        };
        assert!(mean(ClassLabel::Malignant) > 2.0 * mean(ClassLabel::Benign));
    }

    #[test]
    fn rejects_degenerate_config() {
        let mut cfg = small();
        cfg.malignant = cfg.benign.clone();
        assert!(matches!(generate_toy_corpus(&cfg), Err(Error::Config(_))));
        let mut cfg = small();
        cfg.benign.count = [4, 2];
        assert!(generate_toy_corpus(&cfg).is_err());
    }
}
