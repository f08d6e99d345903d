use std::path::Path;

use image::{GrayImage as Luma8, ImageBuffer, Luma, Rgb};

use super::{BinaryMask, GrayImage, RgbImage};
use crate::error::{Error, Result};

fn img_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub fn load_rgb_png(path: &Path) -> Result<RgbImage> {
    let rgb = image::open(path).map_err(img_err(path))?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(RgbImage::from_fn(h, w, |c, y, x| {
        f32::from(rgb.get_pixel(x as u32, y as u32)[c]) / 255.0
    }))
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_rgb_png(img: &RgbImage, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let buf = ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let p = img.pixel(y as usize, x as usize);
        Rgb([quantize(p[0]), quantize(p[1]), quantize(p[2])])
    });
    buf.save(path).map_err(img_err(path))
}

pub fn save_gray_png(img: &GrayImage, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let buf: Luma8 = ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        Luma([quantize(img.get(y as usize, x as usize))])
    });
    buf.save(path).map_err(img_err(path))
}

/// Reads a single-channel mask; values >= 128 are foreground.
pub fn load_mask_png(path: &Path) -> Result<BinaryMask> {
    let g = image::open(path).map_err(img_err(path))?.to_luma8();
    let (w, h) = (g.width() as usize, g.height() as usize);
    Ok(BinaryMask::from_fn(h, w, |y, x| {
        g.get_pixel(x as u32, y as u32)[0] >= 128
    }))
}

/// Writes a mask as 8-bit grayscale with values {0, 255}.
pub fn save_mask_png(mask: &BinaryMask, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let buf: Luma8 = ImageBuffer::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    buf.save(path).map_err(img_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(5, 7, |c, y, x| ((c * 31 + y * 7 + x * 3) % 256) as f32 / 255.0);
        let p = dir.path().join("a/b.png");
        save_rgb_png(&img, &p).unwrap();
        assert_eq!(load_rgb_png(&p).unwrap(), img);

        let m = BinaryMask::from_fn(5, 7, |y, x| (y * x) % 3 == 1);
        let p = dir.path().join("m.png");
        save_mask_png(&m, &p).unwrap();
        assert_eq!(load_mask_png(&p).unwrap(), m);
        let raw = image::open(&p).unwrap().to_luma8();
        assert!(raw.pixels().all(|p| p[0] == 0 || p[0] == 255));
    }
}
