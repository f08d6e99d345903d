//! C ABI over the cytosynth library.
//!
//! Every fallible function returns a [`CsStatus`]; on failure the message is
//! available from [`cs_last_error_message`] on the same thread. Handles are
//! opaque, created by `*_load` and released by `*_free`. Images are planar
//! `float` RGB (`3 x height x width`, values in [0, 1]); masks are `uint8_t`
//! rows of 0/1.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cytosynth::cgan::{cgan_d_loss, cgan_g_loss, cgan_generate, CganCheckpoint};
use cytosynth::imaging::{extract_mask, BinaryMask, ExtractParams, RgbImage};
use cytosynth::maskgan::{gan_d_loss, gan_g_loss, generate_mask, LatentSeed, MaskGanCheckpoint};
use cytosynth::synthesis::synthesize_sample;
use cytosynth::{ClassLabel, Error};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Numeric = 4,
    Contract = 5,
    Io = 6,
    Checkpoint = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsClass {
    Benign = 0,
    Malignant = 1,
}

impl From<CsClass> for ClassLabel {
    fn from(c: CsClass) -> Self {
        match c {
            CsClass::Benign => ClassLabel::Benign,
            CsClass::Malignant => ClassLabel::Malignant,
        }
    }
}

/// Mask extraction parameters; start from [`cs_extract_params_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsExtractParams {
    /// Odd local-mean window side.
    pub window: usize,
    pub offset: f64,
    /// Mixture components.
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

/// Trained mask-to-image generator.
pub struct CsCgan(CganCheckpoint);

/// Trained class-specific mask generator.
pub struct CsMaskGan(MaskGanCheckpoint);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

type Failure = (CsStatus, String);

fn status_of(e: &Error) -> CsStatus {
    match e {
        Error::Param(_) | Error::Config(_) | Error::UnknownArch(_) | Error::Degenerate(_) => CsStatus::InvalidArgument,
        Error::Shape(_) => CsStatus::Shape,
        Error::Numeric(_) | Error::NonFinite { .. } => CsStatus::Numeric,
        Error::Contract(_) => CsStatus::Contract,
        Error::Io { .. } | Error::Image { .. } | Error::Load(_) | Error::Exists(_) => CsStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) => CsStatus::Checkpoint,
    }
}

fn fail(e: Error) -> Failure {
    (status_of(&e), e.to_string())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|l| *l.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CsStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    (CsStatus::NullPointer, format!("{what} is NULL"))
}

/// `len` elements at `p`; NULL is accepted only for `len == 0`.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| (CsStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

fn write_mask(mask: &BinaryMask, out: &mut [u8]) {
    out.copy_from_slice(mask.as_slice());
}

fn write_rgb(img: &RgbImage, out: &mut [f32]) {
    out.copy_from_slice(img.as_slice());
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, empty after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|l| l.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn cs_extract_params_default() -> CsExtractParams {
    let d = ExtractParams::default();
    CsExtractParams {
        window: d.window,
        offset: d.offset,
        k: d.k,
        max_iter: d.max_iter,
        tol: d.tol,
        seed: d.seed,
    }
}

/// Nuclei mask of a planar RGB image. `out_mask` holds `height * width` bytes.
///
/// # Safety
/// `rgb` must point to `3 * height * width` floats and `out_mask` to
/// `height * width` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cs_extract_mask(
    rgb: *const f32,
    height: usize,
    width: usize,
    params: CsExtractParams,
    out_mask: *mut u8,
) -> CsStatus {
    guard(|| {
        let n = height * width;
        let data = slice(rgb, 3 * n, "rgb")?.to_vec();
        let out = slice_mut(out_mask, n, "out_mask")?;
        let img = RgbImage::new(height, width, data).map_err(fail)?;
        let p = ExtractParams {
            window: params.window,
            offset: params.offset,
            k: params.k,
            max_iter: params.max_iter,
            tol: params.tol,
            seed: params.seed,
        };
        p.validate().map_err(fail)?;
        write_mask(&extract_mask(&img, &p).map_err(fail)?, out);
        Ok(())
    })
}

/// Loads a mask-to-image checkpoint and its manifest.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_cgan_load(path: *const c_char, out: *mut *mut CsCgan) -> CsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let ck = CganCheckpoint::load(path_arg(path)?).map_err(fail)?;
        *out = Box::into_raw(Box::new(CsCgan(ck)));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from [`cs_cgan_load`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn cs_cgan_free(handle: *mut CsCgan) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Side length the generator works at; 0 for NULL.
///
/// # Safety
/// `handle` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cs_cgan_image_size(handle: *const CsCgan) -> usize {
    handle.as_ref().map_or(0, |h| h.0.config.image_size)
}

/// Image for a mask; `out_rgb` holds `3 * height * width` floats.
///
/// # Safety
/// `handle` must be live; `mask` must hold `height * width` bytes of 0/1.
#[no_mangle]
pub unsafe extern "C" fn cs_cgan_generate(
    handle: *const CsCgan,
    mask: *const u8,
    height: usize,
    width: usize,
    out_rgb: *mut f32,
) -> CsStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let n = height * width;
        let m = BinaryMask::new(height, width, slice(mask, n, "mask")?.to_vec()).map_err(fail)?;
        let out = slice_mut(out_rgb, 3 * n, "out_rgb")?;
        write_rgb(&cgan_generate(&h.0, &m).map_err(fail)?, out);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_maskgan_load(path: *const c_char, out: *mut *mut CsMaskGan) -> CsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let ck = MaskGanCheckpoint::load(path_arg(path)?).map_err(fail)?;
        *out = Box::into_raw(Box::new(CsMaskGan(ck)));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from [`cs_maskgan_load`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn cs_maskgan_free(handle: *mut CsMaskGan) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// # Safety
/// `handle` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cs_maskgan_image_size(handle: *const CsMaskGan) -> usize {
    handle.as_ref().map_or(0, |h| h.0.config.image_size)
}

/// # Safety
/// `handle` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cs_maskgan_latent_dim(handle: *const CsMaskGan) -> usize {
    handle.as_ref().map_or(0, |h| h.0.config.latent_dim)
}

/// Class the mask generator was trained on.
///
/// # Safety
/// `handle` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_maskgan_class(handle: *const CsMaskGan, out: *mut CsClass) -> CsStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        *out_ref(out, "out")? = match h.0.class_label() {
            ClassLabel::Benign => CsClass::Benign,
            ClassLabel::Malignant => CsClass::Malignant,
        };
        Ok(())
    })
}

/// Mask for latent `z`; `out_mask` holds `image_size^2` bytes.
///
/// # Safety
/// `handle` must be live; `z` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_maskgan_generate(
    handle: *const CsMaskGan,
    z: *const f64,
    dim: usize,
    out_mask: *mut u8,
) -> CsStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let z = LatentSeed::new(slice(z, dim, "z")?.to_vec()).map_err(fail)?;
        let s = h.0.config.image_size;
        let out = slice_mut(out_mask, s * s, "out_mask")?;
        write_mask(&generate_mask(&h.0, &z).map_err(fail)?, out);
        Ok(())
    })
}

/// Standard-normal latent number `index` of the `master_seed` stream.
///
/// # Safety
/// `out` must hold `dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_sample_latent(master_seed: u64, index: u64, out: *mut f64, dim: usize) -> CsStatus {
    guard(|| {
        let z = LatentSeed::derive(master_seed, index, dim).map_err(fail)?;
        slice_mut(out, dim, "out")?.copy_from_slice(z.as_slice());
        Ok(())
    })
}

/// Mask from the class model, then the image generated from that mask.
///
/// # Safety
/// Handles must be live; `z` holds `dim` doubles; `out_mask` holds `s*s`
/// bytes and `out_rgb` `3*s*s` floats where `s` is the shared image size.
#[no_mangle]
pub unsafe extern "C" fn cs_synthesize_sample(
    cgan: *const CsCgan,
    maskgan: *const CsMaskGan,
    class: CsClass,
    z: *const f64,
    dim: usize,
    out_mask: *mut u8,
    out_rgb: *mut f32,
) -> CsStatus {
    guard(|| {
        let c = cgan.as_ref().ok_or_else(|| null("cgan"))?;
        let m = maskgan.as_ref().ok_or_else(|| null("maskgan"))?;
        let z = LatentSeed::new(slice(z, dim, "z")?.to_vec()).map_err(fail)?;
        let s = synthesize_sample(&c.0, &m.0, class.into(), &z).map_err(fail)?;
        let n = s.mask.height() * s.mask.width();
        write_mask(&s.mask, slice_mut(out_mask, n, "out_mask")?);
        write_rgb(&s.image, slice_mut(out_rgb, 3 * n, "out_rgb")?);
        Ok(())
    })
}

/// Conditional discriminator loss on score grids in (0, 1).
///
/// # Safety
/// Arrays must hold the stated counts; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_cgan_d_loss(
    d_real: *const f64,
    n_real: usize,
    d_fake: *const f64,
    n_fake: usize,
    out: *mut f64,
) -> CsStatus {
    guard(|| {
        let v = cgan_d_loss(slice(d_real, n_real, "d_real")?, slice(d_fake, n_fake, "d_fake")?).map_err(fail)?;
        *out_ref(out, "out")? = v;
        Ok(())
    })
}

/// Conditional generator loss: adversarial term plus `lambda` times the MSE
/// between `generated` and `target` (`n_pixels` values each).
///
/// # Safety
/// Arrays must hold the stated counts; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_cgan_g_loss(
    d_fake: *const f64,
    n_fake: usize,
    generated: *const f64,
    target: *const f64,
    n_pixels: usize,
    lambda: f64,
    out: *mut f64,
) -> CsStatus {
    guard(|| {
        let v = cgan_g_loss(
            slice(d_fake, n_fake, "d_fake")?,
            slice(generated, n_pixels, "generated")?,
            slice(target, n_pixels, "target")?,
            lambda,
        )
        .map_err(fail)?;
        *out_ref(out, "out")? = v;
        Ok(())
    })
}

/// Mask-GAN discriminator loss with explicit (smoothed) targets.
///
/// # Safety
/// Arrays must hold the stated counts; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_gan_d_loss(
    d_real: *const f64,
    n_real: usize,
    d_fake: *const f64,
    n_fake: usize,
    real_target: f64,
    fake_target: f64,
    out: *mut f64,
) -> CsStatus {
    guard(|| {
        let v = gan_d_loss(
            slice(d_real, n_real, "d_real")?,
            slice(d_fake, n_fake, "d_fake")?,
            real_target,
            fake_target,
        )
        .map_err(fail)?;
        *out_ref(out, "out")? = v;
        Ok(())
    })
}

/// Mask-GAN generator loss.
///
/// # Safety
/// `d_fake` must hold `n_fake` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_gan_g_loss(d_fake: *const f64, n_fake: usize, out: *mut f64) -> CsStatus {
    guard(|| {
        let v = gan_g_loss(slice(d_fake, n_fake, "d_fake")?).map_err(fail)?;
        *out_ref(out, "out")? = v;
        Ok(())
    })
}
