use serde::{Deserialize, Serialize};

use super::gmm::{gmm_refine, GmmOutcome, GmmParams};
use super::{BinaryMask, GrayImage, RgbImage};
use crate::error::{Error, Result};

/// Rec. 601 luma weights for (R, G, B).
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[inline]
pub fn luminance(rgb: [f64; 3]) -> f64 {
    LUMA_WEIGHTS[0] * rgb[0] + LUMA_WEIGHTS[1] * rgb[1] + LUMA_WEIGHTS[2] * rgb[2]
}

/// Per-channel min/max histogram stretch. Constant channels are returned unchanged.
pub fn stretch_contrast(img: &RgbImage) -> RgbImage {
    let n = img.height() * img.width();
    let mut out = img.as_slice().to_vec();
    for c in 0..3 {
        let ch = &mut out[c * n..(c + 1) * n];
        let (lo, hi) = ch.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });
        if hi > lo {
            let range = hi - lo;
            for v in ch.iter_mut() {
                *v = ((*v - lo) / range).clamp(0.0, 1.0);
            }
        }
    }
    RgbImage::from_raw_unchecked(img.height(), img.width(), out)
}

pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let n = img.height() * img.width();
    let (r, g, b) = (img.channel(0), img.channel(1), img.channel(2));
    let data = (0..n)
        .map(|i| {
            let l = luminance([f64::from(r[i]), f64::from(g[i]), f64::from(b[i])]);
            l.clamp(0.0, 1.0) as f32
        })
        .collect();
    GrayImage {
        height: img.height(),
        width: img.width(),
        data,
    }
}

/// Marks pixels darker than their edge-replicated `window`x`window` local mean
/// by more than `offset`.
pub fn adaptive_threshold(gray: &GrayImage, window: usize, offset: f64) -> Result<BinaryMask> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::Param(format!(
            "threshold window must be odd and >= 1, got {window}"
        )));
    }
    if !(offset >= 0.0 && offset.is_finite()) {
        return Err(Error::Param(format!(
            "threshold offset must be finite and >= 0, got {offset}"
        )));
    }
    let (h, w) = (gray.height(), gray.width());
    let r = window / 2;
    let (ph, pw) = (h + 2 * r, w + 2 * r);

    // Summed-area table over the edge-replicated padding, one row/col of zeros in front.
    let mut sat = vec![0.0f64; (ph + 1) * (pw + 1)];
    for py in 0..ph {
        let sy = py.saturating_sub(r).min(h - 1);
        let mut row = 0.0f64;
        for px in 0..pw {
            let sx = px.saturating_sub(r).min(w - 1);
            row += f64::from(gray.get(sy, sx));
            sat[(py + 1) * (pw + 1) + px + 1] = sat[py * (pw + 1) + px + 1] + row;
        }
    }
    let area = (window * window) as f64;
    let mut mask = BinaryMask::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            // Window in padded coordinates is [y, y + window) x [x, x + window).
            let (y0, x0, y1, x1) = (y, x, y + window, x + window);
            let sum =
                sat[y1 * (pw + 1) + x1] - sat[y0 * (pw + 1) + x1] - sat[y1 * (pw + 1) + x0] + sat[y0 * (pw + 1) + x0];
            let mean = sum / area;
            if f64::from(gray.get(y, x)) < mean - offset {
                mask.set(y, x, true);
            }
        }
    }
    Ok(mask)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractParams {
    pub window: usize,
    pub offset: f64,
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for ExtractParams {
    fn default() -> Self {
        Self {
            window: 15,
            offset: 0.03,
            k: 2,
            max_iter: 100,
            tol: 1e-4,
            seed: 0,
        }
    }
}

impl ExtractParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::Param(format!(
                "threshold window must be odd and >= 1, got {}",
                self.window
            )));
        }
        if !(self.offset >= 0.0 && self.offset.is_finite()) {
            return Err(Error::Param(format!(
                "threshold offset must be finite and >= 0, got {}",
                self.offset
            )));
        }
        if self.k < 2 || self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(Error::Param("gmm needs k >= 2, max_iter >= 1 and tol > 0".into()));
        }
        Ok(())
    }

    pub fn gmm(&self) -> GmmParams {
        GmmParams {
            k: self.k,
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

/// Full extraction pipeline. Returns the rough threshold mask untouched when it
/// has fewer than `k` foreground pixels (nothing to cluster).
pub fn extract_mask(img: &RgbImage, params: &ExtractParams) -> Result<BinaryMask> {
    Ok(extract_mask_detailed(img, params)?.mask)
}

pub fn extract_mask_detailed(img: &RgbImage, params: &ExtractParams) -> Result<GmmOutcome> {
    let gray = to_grayscale(&stretch_contrast(img));
    let rough = adaptive_threshold(&gray, params.window, params.offset)?;
    if rough.count() < params.k {
        return Ok(GmmOutcome {
            mask: rough,
            converged: true,
            iterations: 0,
        });
    }
    let mut rng = crate::rng::derive(params.seed, "gmm-init", 0);
    let out = gmm_refine(img, &rough, &params.gmm(), &mut rng)?;
    if !out.converged {
        log::warn!("gmm refinement did not converge in {} iterations", out.iterations);
    }
    Ok(out)
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_rgb_bilinear(img: &RgbImage, height: usize, width: usize) -> RgbImage {
    if img.dims() == (height, width) {
        return img.clone();
    }
    let (sh, sw) = (img.height() as f32 / height as f32, img.width() as f32 / width as f32);
    RgbImage::from_fn(height, width, |c, y, x| {
        let fy = ((y as f32 + 0.5) * sh - 0.5).clamp(0.0, (img.height() - 1) as f32);
        let fx = ((x as f32 + 0.5) * sw - 0.5).clamp(0.0, (img.width() - 1) as f32);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(img.height() - 1), (x0 + 1).min(img.width() - 1));
        let (ty, tx) = (fy - y0 as f32, fx - x0 as f32);
        let top = img.get(c, y0, x0) * (1.0 - tx) + img.get(c, y0, x1) * tx;
        let bot = img.get(c, y1, x0) * (1.0 - tx) + img.get(c, y1, x1) * tx;
        top * (1.0 - ty) + bot * ty
    })
}

pub fn resize_mask_nearest(mask: &BinaryMask, height: usize, width: usize) -> BinaryMask {
    if mask.dims() == (height, width) {
        return mask.clone();
    }
    BinaryMask::from_fn(height, width, |y, x| {
        let sy = ((y * mask.height()) / height).min(mask.height() - 1);
        let sx = ((x * mask.width()) / width).min(mask.width() - 1);
        mask.get(sy, sx)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_channel(values: &[f32]) -> RgbImage {
        let n = values.len();
        let mut data = values.to_vec();
        data.extend(std::iter::repeat_n(0.5, 2 * n));
        RgbImage::new(1, n, data).unwrap()
    }

    #[test]
    fn stretch_examples() {
        let out = stretch_contrast(&one_channel(&[0.25, 0.5, 0.75]));
        assert_eq!(out.channel(0), &[0.0, 0.5, 1.0]);
        let out = stretch_contrast(&one_channel(&[0.0, 0.3, 1.0]));
        assert_eq!(out.channel(0), &[0.0, 0.3, 1.0]);
        // constant channels (1 and 2 here) pass through untouched
        assert_eq!(out.channel(1), &[0.5, 0.5, 0.5]);
        let c = RgbImage::filled(3, 3, [0.4, 0.4, 0.4]);
        assert_eq!(stretch_contrast(&c), c);
    }

    #[test]
    fn grayscale_examples() {
        let g = to_grayscale(&RgbImage::filled(1, 1, [1.0, 1.0, 1.0]));
        assert_eq!(g.get(0, 0), 1.0);
        let g = to_grayscale(&RgbImage::filled(1, 1, [0.0, 0.0, 0.0]));
        assert_eq!(g.get(0, 0), 0.0);
        let g = to_grayscale(&RgbImage::filled(1, 1, [0.0, 1.0, 0.0]));
        assert!((f64::from(g.get(0, 0)) - 0.587).abs() < 1e-7);
    }

    #[test]
    fn threshold_parameter_errors() {
        let g = to_grayscale(&RgbImage::filled(4, 4, [0.5; 3]));
        assert!(matches!(adaptive_threshold(&g, 4, 0.0), Err(Error::Param(_))));
        assert!(matches!(adaptive_threshold(&g, 0, 0.0), Err(Error::Param(_))));
        assert!(matches!(adaptive_threshold(&g, 3, -0.1), Err(Error::Param(_))));
    }

    #[test]
    fn threshold_trivial_cases() {
        let g = to_grayscale(&RgbImage::filled(16, 16, [0.6; 3]));
        assert_eq!(adaptive_threshold(&g, 5, 0.02).unwrap().count(), 0);
        let noisy = RgbImage::from_fn(16, 16, |_, y, x| ((y * 7 + x * 13) % 17) as f32 / 16.0);
        let g = to_grayscale(&noisy);
        assert_eq!(adaptive_threshold(&g, 1, 0.02).unwrap().count(), 0);
    }

    #[test]
    fn blank_white_extracts_empty_mask() {
        let img = RgbImage::filled(32, 32, [1.0; 3]);
        let m = extract_mask(&img, &ExtractParams::default()).unwrap();
        assert_eq!(m.count(), 0);
        assert_eq!(m.dims(), (32, 32));
    }

    #[test]
    fn resize_identity_and_nearest() {
        let img = RgbImage::from_fn(8, 8, |c, y, x| (c + y + x) as f32 / 20.0);
        assert_eq!(resize_rgb_bilinear(&img, 8, 8), img);
        let m = BinaryMask::from_fn(4, 4, |y, x| y == x);
        let up = resize_mask_nearest(&m, 8, 8);
        assert!(up.get(0, 1) && up.get(7, 6) && !up.get(0, 7));
    }

    proptest! {
        #[test]
        fn stretch_is_idempotent_and_monotone(vals in proptest::collection::vec(0.0f32..=1.0, 3..40)) {
            let img = one_channel(&vals);
            let once = stretch_contrast(&img);
            let twice = stretch_contrast(&once);
            prop_assert_eq!(&once, &twice);
            let ch = once.channel(0);
            for i in 0..vals.len() {
                for j in 0..vals.len() {
                    if vals[i] <= vals[j] {
                        prop_assert!(ch[i] <= ch[j]);
                    }
                }
            }
        }
    }
}
