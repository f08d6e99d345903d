use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::RgbImage;
use crate::rng::Rng;

/// Probabilities and magnitudes for [`traditional_augment`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    pub hflip_p: f64,
    pub vflip_p: f64,
    pub rotate_p: f64,
    pub max_rotation_deg: f64,
    pub noise_p: f64,
    pub noise_sigma: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            hflip_p: 0.5,
            vflip_p: 0.5,
            rotate_p: 0.5,
            max_rotation_deg: 30.0,
            noise_p: 0.5,
            noise_sigma: 0.03,
        }
    }
}

impl AugmentParams {
    /// Every transform disabled.
    pub fn none() -> Self {
        Self {
            hflip_p: 0.0,
            vflip_p: 0.0,
            rotate_p: 0.0,
            max_rotation_deg: 0.0,
            noise_p: 0.0,
            noise_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in [self.hflip_p, self.vflip_p, self.rotate_p, self.noise_p] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("augmentation probability {p} outside [0, 1]")));
            }
        }
        if !(self.max_rotation_deg >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::Config("rotation bound and noise sigma must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn hflip(img: &RgbImage) -> RgbImage {
    let w = img.width();
    RgbImage::from_fn(img.height(), w, |c, y, x| img.get(c, y, w - 1 - x))
}

pub fn vflip(img: &RgbImage) -> RgbImage {
    let h = img.height();
    RgbImage::from_fn(h, img.width(), |c, y, x| img.get(c, h - 1 - y, x))
}

/// Rotation about the image centre with bilinear sampling; samples falling
/// outside the image take the nearest edge value.
pub fn rotate(img: &RgbImage, degrees: f64) -> RgbImage {
    let (h, w) = img.dims();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
    let mut src = vec![(0usize, 0usize, 0usize, 0usize, 0.0f64, 0.0f64); h * w];
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            // inverse mapping: rotate the output coordinate back by -degrees
            let sx = clamp(cos * dx + sin * dy + cx - 0.5, w);
            let sy = clamp(-sin * dx + cos * dy + cy - 0.5, h);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            src[y * w + x] = (
                y0,
                (y0 + 1).min(h - 1),
                x0,
                (x0 + 1).min(w - 1),
                sy - y0 as f64,
                sx - x0 as f64,
            );
        }
    }
    RgbImage::from_fn(h, w, |c, y, x| {
        let (y0, y1, x0, x1, ty, tx) = src[y * w + x];
        let at = |yy, xx| f64::from(img.get(c, yy, xx));
        let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
        let bot = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
        (top * (1.0 - ty) + bot * ty) as f32
    })
}

/// Horizontal flip, vertical flip, rotation in `±max_rotation_deg`, then
/// additive Gaussian noise, each applied independently with its own
/// probability. Noisy values are clamped to `[0, 1]`.
pub fn traditional_augment(img: &RgbImage, rng: &mut Rng, params: &AugmentParams) -> RgbImage {
    let mut out = img.clone();
    if rng.random_bool(params.hflip_p) {
        out = hflip(&out);
    }
    if rng.random_bool(params.vflip_p) {
        out = vflip(&out);
    }
    if rng.random_bool(params.rotate_p) && params.max_rotation_deg > 0.0 {
        let m = params.max_rotation_deg;
        out = rotate(&out, rng.random_range(-m..=m));
    }
    if rng.random_bool(params.noise_p) && params.noise_sigma > 0.0 {
        let n = Normal::new(0.0, params.noise_sigma).expect("sigma validated");
        let (h, w) = out.dims();
        let src = out;
        out = RgbImage::from_fn(h, w, |c, y, x| src.get(c, y, x) + n.sample(rng) as f32);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> RgbImage {
        RgbImage::from_fn(h, w, |c, y, x| ((c * 31 + y * 7 + x * 3) % 17) as f32 / 16.0)
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let img = ramp(9, 11);
        let mut r = rng::derive(0, "t", 0);
        for _ in 0..20 {
            assert_eq!(traditional_augment(&img, &mut r, &AugmentParams::none()), img);
        }
    }

    #[test]
    fn flips_are_involutions() {
        let img = ramp(5, 8);
        assert_eq!(hflip(&hflip(&img)), img);
        assert_eq!(vflip(&vflip(&img)), img);
        assert_ne!(hflip(&img), img);
    }

    #[test]
    fn rotation_by_zero_is_identity_and_quarter_turn_permutes() {
        let img = ramp(6, 6);
        let r0 = rotate(&img, 0.0);
        for (a, b) in r0.as_slice().iter().zip(img.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
        let q = rotate(&img, 90.0);
        let mut a: Vec<f32> = q.as_slice().to_vec();
        let mut b: Vec<f32> = img.as_slice().to_vec();
        a.sort_by(f32::total_cmp);
        b.sort_by(f32::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn noise_std_matches_sigma_on_mid_gray() {
        let img = RgbImage::filled(200, 200, [0.5; 3]);
        let p = AugmentParams {
            noise_p: 1.0,
            noise_sigma: 0.05,
            ..AugmentParams::none()
        };
        let out = traditional_augment(&img, &mut rng::derive(4, "noise", 0), &p);
        let dev: Vec<f64> = out.as_slice().iter().map(|v| f64::from(*v) - 0.5).collect();
        let n = dev.len() as f64;
        let mean = dev.iter().sum::<f64>() / n;
        let sd = (dev.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(dev.len() >= 100_000);
        assert!((sd - 0.05).abs() < 0.005, "sd {sd}");
    }

    proptest! {
        #[test]
        fn output_stays_in_range(seed in any::<u64>(), sigma in 0.0f64..0.5) {
            let img = ramp(7, 9);
            let p = AugmentParams { noise_p: 1.0, noise_sigma: sigma, rotate_p: 1.0, ..Default::default() };
            let out = traditional_augment(&img, &mut rng::derive(seed, "aug", 0), &p);
            prop_assert!(out.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(out.dims(), img.dims());
        }
    }
}
