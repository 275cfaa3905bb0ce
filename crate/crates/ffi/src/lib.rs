//! C ABI for pixcue.
//!
//! Every fallible function returns a [`PixcueStatus`]. On failure the message
//! is available from [`pixcue_last_error`] on the same thread. Images are
//! square, row-major, and complex data is interleaved `(re, im)` pairs.
//! Masks are `n` bytes, one per phase-encode row, nonzero meaning sampled.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use num_complex::Complex64;
use pixcue::forward_model::{dft2_unitary, idft2_unitary, make_mask_equidistant, make_mask_random};
use pixcue::net::{forward, init_params, load_checkpoint, ArchSpec, ForwardMode, NetworkParameters};
use pixcue::quantizer::expectation_image;
use pixcue::uncertainty::{exact_variance_map, fast_variance_map};
use pixcue::{ClassProbabilityVolume, ComplexImage, KSpaceGrid, PixcueError, SamplingMask};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixcueStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    NonFinite = 4,
    NotNormalized = 5,
    Format = 6,
    Io = 7,
    Internal = 8,
}

/// Opaque trained network.
pub struct PixcueModel {
    params: NetworkParameters,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &PixcueError) -> PixcueStatus {
    match e {
        PixcueError::Shape(_) => PixcueStatus::Shape,
        PixcueError::NonFinite(_) => PixcueStatus::NonFinite,
        PixcueError::NotNormalized { .. } => PixcueStatus::NotNormalized,
        PixcueError::Format(_) | PixcueError::Json(_) => PixcueStatus::Format,
        PixcueError::Io { .. } => PixcueStatus::Io,
        PixcueError::InvalidArgument(_) | PixcueError::Config(_) | PixcueError::UndefinedCorrelation(_) => {
            PixcueStatus::InvalidArgument
        }
        PixcueError::Diverged { .. } => PixcueStatus::Internal,
    }
}

enum Failure {
    Null(&'static str),
    Lib(PixcueError),
}

impl From<PixcueError> for Failure {
    fn from(e: PixcueError) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PixcueStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PixcueStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PixcueStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            PixcueStatus::Internal
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn checked_pixels(n: usize) -> Result<usize, Failure> {
    n.checked_mul(n)
        .filter(|&p| p > 0)
        .ok_or_else(|| PixcueError::Shape(format!("invalid image size {n}")).into())
}

fn complex_from(data: &[f64]) -> Vec<Complex64> {
    data.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

fn write_complex(values: &[Complex64], out: &mut [f64]) {
    for (o, v) in out.chunks_exact_mut(2).zip(values) {
        o[0] = v.re;
        o[1] = v.im;
    }
}

fn mask_from(rows: &[u8]) -> Result<SamplingMask, Failure> {
    let lines = rows.iter().enumerate().filter(|(_, &r)| r != 0).map(|(i, _)| i).collect();
    Ok(SamplingMask::new(rows.len(), lines)?)
}

fn write_mask(mask: &SamplingMask, out: &mut [u8]) {
    for (o, sampled) in out.iter_mut().zip(mask.row_indicator()) {
        *o = u8::from(sampled);
    }
}

/// Message for the most recent failure on this thread; empty after success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn pixcue_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pixcue_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a `.pxc` checkpoint. On success `*out` owns a model that must be
/// released with [`pixcue_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pixcue_model_load(path: *const c_char, out: *mut *mut PixcueModel) -> PixcueStatus {
    guard(|| {
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| PixcueError::InvalidArgument("path is not UTF-8".into()))?;
        let params = load_checkpoint(path)?.params;
        *out = Box::into_raw(Box::new(PixcueModel { params }));
        Ok(())
    })
}

/// Creates an untrained model with seeded initialization.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pixcue_model_init(
    iterations: usize,
    hidden_channels: usize,
    n_bits: u32,
    seed: u64,
    out: *mut *mut PixcueModel,
) -> PixcueStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let arch = ArchSpec { iterations, hidden_channels, n_bits, ..ArchSpec::default() };
        let params = init_params(&arch, seed)?;
        *out = Box::into_raw(Box::new(PixcueModel { params }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pixcue_model_free(model: *mut PixcueModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of intensity classes the model predicts, or 0 for null.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn pixcue_model_classes(model: *const PixcueModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.arch.classes())
}

/// Runs the network on undersampled k-space.
///
/// `kspace` holds `2*n*n` values and `mask` `n` bytes. `recon` receives
/// `n*n` values. `variance` (`n*n`) and `probs` (`n*n*classes`) are optional
/// and may be null.
///
/// # Safety
/// Non-null pointers must reference buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn pixcue_reconstruct(
    model: *const PixcueModel,
    n: usize,
    kspace: *const f64,
    mask: *const u8,
    recon: *mut f64,
    variance: *mut f64,
    probs: *mut f64,
) -> PixcueStatus {
    guard(|| {
        let model = model.as_ref().ok_or(Failure::Null("model"))?;
        let pixels = checked_pixels(n)?;
        let y_u = KSpaceGrid::new(n, n, complex_from(slice(kspace, 2 * pixels, "kspace")?))?;
        let mask = mask_from(slice(mask, n, "mask")?)?;
        let recon = slice_mut(recon, pixels, "recon")?;
        let volume = forward(&y_u, &mask, &model.params, ForwardMode::Deterministic)?;
        recon.copy_from_slice(expectation_image(&volume)?.values());
        if !variance.is_null() {
            let out = slice_mut(variance, pixels, "variance")?;
            out.copy_from_slice(exact_variance_map(&volume)?.values());
        }
        if !probs.is_null() {
            let out = slice_mut(probs, volume.probs().len(), "probs")?;
            out.copy_from_slice(volume.probs());
        }
        Ok(())
    })
}

unsafe fn variance_with(
    probs: *const f64,
    n_pixels: usize,
    classes: usize,
    out: *mut f64,
    f: fn(&ClassProbabilityVolume) -> pixcue::Result<pixcue::UncertaintyMap>,
) -> PixcueStatus {
    guard(|| {
        let len = n_pixels
            .checked_mul(classes)
            .ok_or_else(|| PixcueError::Shape("volume size overflows".into()))?;
        let p = slice(probs, len, "probs")?.to_vec();
        let out = slice_mut(out, n_pixels, "out")?;
        let volume = ClassProbabilityVolume::new(1, n_pixels, classes, p)?;
        out.copy_from_slice(f(&volume)?.values());
        Ok(())
    })
}

/// Exact class variance per pixel of a `n_pixels x classes` probability array.
///
/// # Safety
/// `probs` must hold `n_pixels*classes` values and `out` `n_pixels`.
#[no_mangle]
pub unsafe extern "C" fn pixcue_exact_variance(
    probs: *const f64,
    n_pixels: usize,
    classes: usize,
    out: *mut f64,
) -> PixcueStatus {
    variance_with(probs, n_pixels, classes, out, exact_variance_map)
}

/// Peak-width variance estimate per pixel.
///
/// # Safety
/// `probs` must hold `n_pixels*classes` values and `out` `n_pixels`.
#[no_mangle]
pub unsafe extern "C" fn pixcue_fast_variance(
    probs: *const f64,
    n_pixels: usize,
    classes: usize,
    out: *mut f64,
) -> PixcueStatus {
    variance_with(probs, n_pixels, classes, out, fast_variance_map)
}

/// Seeded random row mask with a fully sampled center block.
///
/// # Safety
/// `out` must hold `n` bytes.
#[no_mangle]
pub unsafe extern "C" fn pixcue_mask_random(
    n: usize,
    accel: f64,
    center_fraction: f64,
    seed: u64,
    out: *mut u8,
) -> PixcueStatus {
    guard(|| {
        let out = slice_mut(out, n, "out")?;
        write_mask(&make_mask_random(n, accel, center_fraction, seed)?, out);
        Ok(())
    })
}

/// Equidistant row mask with a fully sampled center block.
///
/// # Safety
/// `out` must hold `n` bytes.
#[no_mangle]
pub unsafe extern "C" fn pixcue_mask_equidistant(
    n: usize,
    accel: f64,
    center_fraction: f64,
    out: *mut u8,
) -> PixcueStatus {
    guard(|| {
        let out = slice_mut(out, n, "out")?;
        write_mask(&make_mask_equidistant(n, accel, center_fraction)?, out);
        Ok(())
    })
}

/// Unitary centered forward 2D DFT of an interleaved complex image.
///
/// # Safety
/// `input` and `out` must each hold `2*n*n` values and must not overlap.
#[no_mangle]
pub unsafe extern "C" fn pixcue_dft2(n: usize, input: *const f64, out: *mut f64) -> PixcueStatus {
    guard(|| {
        let pixels = checked_pixels(n)?;
        let img = ComplexImage::new(n, n, complex_from(slice(input, 2 * pixels, "input")?))?;
        let k = dft2_unitary(&img)?;
        write_complex(k.values(), slice_mut(out, 2 * pixels, "out")?);
        Ok(())
    })
}

/// Unitary centered inverse 2D DFT of interleaved k-space.
///
/// # Safety
/// `input` and `out` must each hold `2*n*n` values and must not overlap.
#[no_mangle]
pub unsafe extern "C" fn pixcue_idft2(n: usize, input: *const f64, out: *mut f64) -> PixcueStatus {
    guard(|| {
        let pixels = checked_pixels(n)?;
        let k = KSpaceGrid::new(n, n, complex_from(slice(input, 2 * pixels, "input")?))?;
        let img = idft2_unitary(&k)?;
        write_complex(img.values(), slice_mut(out, 2 * pixels, "out")?);
        Ok(())
    })
}
