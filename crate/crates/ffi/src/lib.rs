//! C ABI for the thermalign toy model.
//!
//! Every function returns a [`TaStatus`]. On failure a message is kept per
//! thread and can be read with [`ta_last_error`]. Models are opaque handles
//! created by [`ta_model_load`] and released with [`ta_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ndarray::{Array2, Array3};
use thermalign::dataset::sharegpt::IMAGE_PLACEHOLDER;
use thermalign::evalkit::{parse_species_count, render_prompt, PromptMode};
use thermalign::model::{Checkpoint, ImageInput, PartitionReport, ToyVlm};
use thermalign::train::{lr_at, TrainConfig};
use thermalign::Error;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Shape = 5,
    Config = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaPromptMode {
    ClosedSet = 0,
    OpenSet = 1,
}

/// Parsed `Species; Count` answer. `species` is 0 deer, 1 rhino, 2 elephant,
/// or -1 when absent or not one of the three.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaPrediction {
    pub ok: bool,
    pub species: i32,
    pub count: u32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaPartition {
    pub trained_params: u64,
    pub total_params: u64,
    pub trained_percent: f64,
    pub trained_tensors: u64,
    pub frozen_tensors: u64,
}

/// A loaded model. Opaque to C.
pub struct TaModel {
    inner: ToyVlm,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(err: &Error) -> TaStatus {
    match err {
        Error::Io { .. } | Error::Image { .. } => TaStatus::Io,
        Error::Checkpoint(_) => TaStatus::Checkpoint,
        Error::Shape(_) => TaStatus::Shape,
        Error::Config(_) => TaStatus::Config,
        Error::InvalidStep { .. } | Error::UnknownToken(_) | Error::EmptyTarget => TaStatus::InvalidArgument,
        _ => TaStatus::Internal,
    }
}

fn fail(err: Error) -> TaStatus {
    let s = status_of(&err);
    set_error(err.to_string());
    s
}

/// Runs `f`, turning panics into `Internal`.
fn guard(f: impl FnOnce() -> TaStatus) -> TaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            TaStatus::Internal
        }
    }
}

fn null(what: &str) -> TaStatus {
    set_error(format!("{what} is null"));
    TaStatus::NullPointer
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, TaStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        TaStatus::InvalidArgument
    })
}

/// Message of the last failure on this thread. The pointer stays valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ta_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ta_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a full checkpoint (backbones and projector).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ta_model_load(path: *const c_char, out: *mut *mut TaModel) -> TaStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let path = match c_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Checkpoint::load(Path::new(path)).and_then(Checkpoint::into_model) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(TaModel { inner: m }));
                TaStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Overlays a projector-only checkpoint onto a loaded model.
///
/// # Safety
/// `model` must come from [`ta_model_load`]; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ta_model_apply(model: *mut TaModel, path: *const c_char) -> TaStatus {
    guard(|| {
        let Some(model) = model.as_mut() else { return null("model") };
        let path = match c_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Checkpoint::load(Path::new(path)).and_then(|c| c.apply_to(&mut model.inner)) {
            Ok(()) => TaStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`ta_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ta_model_free(model: *mut TaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Trainable/frozen parameter split of a model.
///
/// # Safety
/// `model` must come from [`ta_model_load`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ta_model_partition(model: *const TaModel, out: *mut TaPartition) -> TaStatus {
    guard(|| {
        let Some(model) = model.as_ref() else { return null("model") };
        let Some(out) = out.as_mut() else { return null("out") };
        let r = PartitionReport::of(&model.inner);
        *out = TaPartition {
            trained_params: r.trained_params as u64,
            total_params: r.total_params as u64,
            trained_percent: r.trained_percent,
            trained_tensors: r.trained_tensors as u64,
            frozen_tensors: r.frozen_tensors as u64,
        };
        TaStatus::Ok
    })
}

/// Greedy answer for one image given as row-major `height × width ×
/// channels` intensities in `[0, 1]`, `channels` being 1 or 3. The answer is
/// written NUL-terminated into `buf`; `written` receives its length without
/// the terminator. When `buf` is too small nothing is written and `written`
/// holds the length needed.
///
/// # Safety
/// `pixels` must hold `height·width·channels` values; `buf` must hold
/// `buf_len` bytes; `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ta_model_answer(
    model: *const TaModel,
    pixels: *const f64,
    height: usize,
    width: usize,
    channels: usize,
    mode: TaPromptMode,
    max_new_tokens: usize,
    buf: *mut c_char,
    buf_len: usize,
    written: *mut usize,
) -> TaStatus {
    guard(|| {
        let Some(model) = model.as_ref() else { return null("model") };
        if pixels.is_null() {
            return null("pixels");
        }
        let Some(written) = written.as_mut() else { return null("written") };
        if height == 0 || width == 0 || max_new_tokens == 0 {
            set_error("height, width and max_new_tokens must be positive");
            return TaStatus::InvalidArgument;
        }
        let n = height * width * channels;
        let data = std::slice::from_raw_parts(pixels, n).to_vec();
        let image = match channels {
            1 => ImageInput::Gray(Array2::from_shape_vec((height, width), data).expect("length checked")),
            3 => ImageInput::Rgb(Array3::from_shape_vec((height, width, 3), data).expect("length checked")),
            c => {
                set_error(format!("channels must be 1 or 3, got {c}"));
                return TaStatus::InvalidArgument;
            }
        };
        let mode = match mode {
            TaPromptMode::ClosedSet => PromptMode::ClosedSet,
            TaPromptMode::OpenSet => PromptMode::OpenSet,
        };
        let user = format!("{IMAGE_PLACEHOLDER}\n{}", render_prompt(mode));
        let text = match model.inner.answer(&image, &user, max_new_tokens) {
            Ok(t) => t,
            Err(e) => return fail(e),
        };
        *written = text.len();
        if buf.is_null() || buf_len <= text.len() {
            set_error(format!("answer needs {} bytes plus the terminator", text.len()));
            return TaStatus::BufferTooSmall;
        }
        std::ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
        *buf.add(text.len()) = 0;
        TaStatus::Ok
    })
}

/// Parses a `Species; Count` answer. Malformed text is not an error: the
/// call succeeds with `ok` false.
///
/// # Safety
/// `text` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ta_parse_species_count(text: *const c_char, out: *mut TaPrediction) -> TaStatus {
    guard(|| {
        let Some(out) = out.as_mut() else { return null("out") };
        if text.is_null() {
            return null("text");
        }
        let raw = String::from_utf8_lossy(CStr::from_ptr(text).to_bytes());
        let p = parse_species_count(&raw);
        *out = TaPrediction {
            ok: p.is_ok(),
            species: p.known_species().map_or(-1, |s| s.index() as i32),
            count: p.count.unwrap_or(0),
        };
        TaStatus::Ok
    })
}

/// Learning rate at `step` under linear warmup and cosine decay.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ta_lr_at(step: u64, peak_lr: f64, warmup_ratio: f64, max_steps: u64, out: *mut f64) -> TaStatus {
    guard(|| {
        let Some(out) = out.as_mut() else { return null("out") };
        let cfg = TrainConfig { peak_lr, warmup_ratio, max_steps, ..TrainConfig::default() };
        match lr_at(step, &cfg) {
            Ok(v) => {
                *out = v;
                TaStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
