//! C ABI for loading frozen eye-closedness models and classifying images.
//!
//! Every function returns an [`FdmStatus`]. On failure a message is kept
//! per thread and can be read with [`fdm_last_error`]. Handles are opaque
//! and must be released with [`fdm_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fatigue_core::data::resize_bilinear;
use fatigue_core::metrics::{macro_metrics, per_class_metrics, ConfusionMatrix2};
use fatigue_core::model_io::{export, import, predict};
use fatigue_core::rng::purpose;
use fatigue_core::{build_fatigue_net, Error, FormatError, GrayImage, Network, Rng};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Checksum = 5,
    Shape = 6,
    Panic = 7,
}

/// Opaque model handle.
pub struct FdmModel {
    net: Network,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FdmMetrics {
    pub accuracy: f64,
    /// Indexed by class: 0 closed, 1 open.
    pub precision: [f64; 2],
    pub recall: [f64; 2],
    pub f1: [f64; 2],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> FdmStatus {
    match err {
        Error::Io { .. } => FdmStatus::Io,
        Error::Format(FormatError::Checksum { .. }) => FdmStatus::Checksum,
        Error::Format(_) | Error::Decode { .. } => FdmStatus::Format,
        Error::Shape(_) | Error::InvalidShape(_) => FdmStatus::Shape,
        _ => FdmStatus::InvalidArgument,
    }
}

fn fail(status: FdmStatus, message: impl Into<String>) -> FdmStatus {
    set_error(message.into());
    status
}

fn guard(f: impl FnOnce() -> Result<(), FdmStatus>) -> FdmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FdmStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(FdmStatus::Panic, "internal panic"),
    }
}

fn core<T>(r: fatigue_core::Result<T>) -> Result<T, FdmStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), FdmStatus> {
    if p.is_null() {
        Err(fail(FdmStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, FdmStatus> {
    non_null(path, "path")?;
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| fail(FdmStatus::InvalidArgument, "path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn model_ref<'a>(model: *const FdmModel) -> Result<&'a FdmModel, FdmStatus> {
    non_null(model, "model")?;
    Ok(&*model)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fdm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fdm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates an untrained full-size network initialised from `seed`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn fdm_model_new(seed: u64, out: *mut *mut FdmModel) -> FdmStatus {
    guard(|| {
        non_null(out, "out")?;
        let net = build_fatigue_net(&mut Rng::derive(seed, purpose::INIT, 0));
        *out = Box::into_raw(Box::new(FdmModel { net }));
        Ok(())
    })
}

/// Loads a model file. `*out` is set only on success.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fdm_model_load(path: *const c_char, out: *mut *mut FdmModel) -> FdmStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path)?;
        let net = core(import(&path))?;
        *out = Box::into_raw(Box::new(FdmModel { net }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fdm_model_save(model: *const FdmModel, path: *const c_char) -> FdmStatus {
    guard(|| {
        let model = model_ref(model)?;
        let path = path_arg(path)?;
        core(export(&model.net, &path)).map(|_| ())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fdm_model_free(model: *mut FdmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fdm_model_param_count(model: *const FdmModel, out: *mut u64) -> FdmStatus {
    guard(|| {
        let model = model_ref(model)?;
        non_null(out, "out")?;
        *out = model.net.param_count() as u64;
        Ok(())
    })
}

/// Input width and height the model expects.
///
/// # Safety
/// `model` must be a live handle; both outputs writable.
#[no_mangle]
pub unsafe extern "C" fn fdm_model_input_size(
    model: *const FdmModel,
    out_width: *mut u32,
    out_height: *mut u32,
) -> FdmStatus {
    guard(|| {
        let model = model_ref(model)?;
        non_null(out_width, "out_width")?;
        non_null(out_height, "out_height")?;
        let shape = model.net.input_shape();
        *out_height = shape[0] as u32;
        *out_width = shape[1] as u32;
        Ok(())
    })
}

/// Classifies a row-major grayscale image with values in 0..=255. Images of
/// another size are resized bilinearly. `out_label` is 0 closed, 1 open.
///
/// # Safety
/// `pixels` must point to `width * height` floats; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn fdm_model_predict(
    model: *const FdmModel,
    pixels: *const f32,
    width: u32,
    height: u32,
    out_probability: *mut f32,
    out_label: *mut i32,
) -> FdmStatus {
    guard(|| {
        let model = model_ref(model)?;
        non_null(pixels, "pixels")?;
        non_null(out_probability, "out_probability")?;
        non_null(out_label, "out_label")?;
        let (w, h) = (width as usize, height as usize);
        let n = w
            .checked_mul(h)
            .filter(|&n| n > 0)
            .ok_or_else(|| fail(FdmStatus::InvalidArgument, "image has no pixels"))?;
        let data = std::slice::from_raw_parts(pixels, n).to_vec();
        let image = core(GrayImage::new(w, h, data))?;
        let shape = model.net.input_shape();
        let image = core(resize_bilinear(&image, shape[1], shape[0]))?;
        let (p, label) = core(predict(&model.net, &image))?;
        *out_probability = p;
        *out_label = label.index() as i32;
        Ok(())
    })
}

/// Metrics for a 2x2 confusion matrix given row-major as
/// `[true0/pred0, true0/pred1, true1/pred0, true1/pred1]`.
/// Zero denominators yield 0.
///
/// # Safety
/// `counts` must point to 4 integers and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn fdm_metrics(counts: *const u64, out: *mut FdmMetrics) -> FdmStatus {
    guard(|| {
        non_null(counts, "counts")?;
        non_null(out, "out")?;
        let c = std::slice::from_raw_parts(counts, 4);
        let cm = ConfusionMatrix2::new([[c[0], c[1]], [c[2], c[3]]]);
        let [a, b] = per_class_metrics(&cm);
        let m = macro_metrics(&cm);
        *out = FdmMetrics {
            accuracy: m.accuracy,
            precision: [a.precision, b.precision],
            recall: [a.recall, b.recall],
            f1: [a.f1, b.f1],
            macro_precision: m.precision,
            macro_recall: m.recall,
            macro_f1: m.f1,
        };
        Ok(())
    })
}
