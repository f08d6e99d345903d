//! Raster types and unsupervised nuclei-mask extraction.
//!
//! The extraction pipeline is a plain composition:
//! contrast stretch -> luminance -> adaptive mean threshold -> colour GMM
//! refinement that keeps only the darkest mixture component.

mod gmm;
mod io;
mod ops;

pub use gmm::{gmm_refine, GmmOutcome, GmmParams};
pub use io::{load_mask_png, load_rgb_png, save_gray_png, save_mask_png, save_rgb_png};
pub use ops::{
    adaptive_threshold, extract_mask, extract_mask_detailed, luminance, resize_mask_nearest, resize_rgb_bilinear,
    stretch_contrast, to_grayscale, ExtractParams, LUMA_WEIGHTS,
};

use crate::error::{Error, Result};

/// Three-channel raster with values in `[0, 1]`, stored planar (`c, y, x`).
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != 3 * height * width {
            return Err(Error::Shape(format!(
                "rgb buffer has {} values, expected 3x{height}x{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::Param(format!("rgb value {v} outside [0,1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Builds an image from `f(channel, y, x)`, clamping into `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        assert!(height >= 1 && width >= 1, "image dims must be positive");
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    let v = f(c, y, x);
                    data.push(if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
                }
            }
        }
        Self { height, width, data }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        Self::from_fn(height, width, |c, _, _| rgb[c])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    /// Mean squared difference over all pixels and channels.
    pub fn mse(&self, other: &RgbImage) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "mse between {:?} and {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = f64::from(*a) - f64::from(*b);
                d * d
            })
            .sum();
        Ok(s / self.data.len() as f64)
    }

    pub(crate) fn from_raw_unchecked(height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), 3 * height * width);
        Self { height, width, data }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "gray buffer has {} values, expected {height}x{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::Param(format!("gray value {v} outside [0,1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Single-channel raster restricted to `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask buffer has {} values, expected {height}x{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| **v > 1) {
            return Err(Error::Param(format!("mask value {v} is not 0 or 1")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height >= 1 && width >= 1, "mask dims must be positive");
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = u8::from(f(y, x));
            }
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.data[y * self.width + x] = u8::from(on);
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v == 1).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    /// True when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(a, b)| *a <= *b)
    }

    /// Intersection over union. Two empty masks have IoU 1.
    pub fn iou(&self, other: &BinaryMask) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "iou between {:?} and {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.data.iter().zip(&other.data) {
            inter += usize::from(*a & *b);
            union += usize::from(*a | *b);
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Shape(format!("image dims {height}x{width} must be positive")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors_enforce_invariants() {
        assert!(RgbImage::new(1, 1, vec![0.0, 0.5, 1.0]).is_ok());
        assert!(RgbImage::new(1, 1, vec![0.0, 0.5, 1.5]).is_err());
        assert!(RgbImage::new(1, 1, vec![0.0, f32::NAN, 1.0]).is_err());
        assert!(RgbImage::new(0, 1, vec![]).is_err());
        assert!(BinaryMask::new(1, 2, vec![0, 2]).is_err());
        assert!(GrayImage::new(1, 2, vec![0.1]).is_err());
    }

    #[test]
    fn iou_cases() {
        let a = BinaryMask::from_fn(4, 4, |y, _| y < 2);
        let b = BinaryMask::from_fn(4, 4, |y, _| y < 1);
        assert_eq!(a.iou(&b).unwrap(), 0.5);
        assert!(b.is_subset_of(&a));
        assert!(!a.is_subset_of(&b));
        let z = BinaryMask::zeros(4, 4);
        assert_eq!(z.iou(&z).unwrap(), 1.0);
    }
}
