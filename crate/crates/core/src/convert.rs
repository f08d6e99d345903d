//! Conversions between rasters and network tensors.

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, RgbImage};
use crate::nn::Tensor;

/// `[3, h, w]`
pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let data = img.as_slice().iter().map(|v| f64::from(*v)).collect();
    Tensor::from_vec(&[3, img.height(), img.width()], data).expect("rgb shape")
}

/// `[1, h, w]` with values 0.0 / 1.0.
pub fn mask_to_tensor(mask: &BinaryMask) -> Tensor {
    let data = mask.as_slice().iter().map(|v| f64::from(*v)).collect();
    Tensor::from_vec(&[1, mask.height(), mask.width()], data).expect("mask shape")
}

/// Reads a `[3, h, w]` (or `[1, 3, h, w]`) tensor back into an image, clamping into `[0, 1]`.
pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage> {
    let (h, w) = match t.shape() {
        [3, h, w] | [1, 3, h, w] => (*h, *w),
        s => return Err(Error::Shape(format!("expected a 3xHxW tensor, got {s:?}"))),
    };
    let data = t.data().iter().map(|v| (*v as f32).clamp(0.0, 1.0)).collect();
    RgbImage::new(h, w, data)
}

/// Binarises a `[1, h, w]` (or `[1, 1, h, w]`) map: foreground iff value >= `threshold`.
pub fn tensor_to_mask(t: &Tensor, threshold: f64) -> Result<BinaryMask> {
    let (h, w) = match t.shape() {
        [1, h, w] | [1, 1, h, w] => (*h, *w),
        s => return Err(Error::Shape(format!("expected a 1xHxW tensor, got {s:?}"))),
    };
    let data = t.data().iter().map(|v| u8::from(*v >= threshold)).collect();
    BinaryMask::new(h, w, data)
}
