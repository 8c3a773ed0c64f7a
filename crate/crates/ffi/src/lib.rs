//! C ABI over the `attn_guide` crate.
//!
//! Every function returns an [`AgStatus`]; on failure a message is kept in
//! thread-local storage and can be copied out with [`ag_last_error`]. Models
//! are opaque [`AgModel`] handles created by `ag_model_new`/`ag_model_load`
//! and released with `ag_model_free`. Panics never cross the boundary.
//!
//! # Safety
//!
//! Pointer arguments must be valid for the lengths implied by the size
//! arguments. Strings are NUL-terminated UTF-8.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use attn_guide::autodiff::Tensor;
use attn_guide::backbone::BackboneConfig;
use attn_guide::checkpoint::ParamStore;
use attn_guide::data::{mask_to_bbox, mask_to_scribble, Image, Mask};
use attn_guide::loss::{guidance_term, FocusRegionMask, GuidanceStyle, DEFAULT_EPS};
use attn_guide::train::{prepare, Model};
use attn_guide::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgStatus {
    AgOk = 0,
    /// A required pointer argument was null.
    AgErrNull = 1,
    /// Arguments violate an operation's preconditions (shapes, ranges).
    AgErrContract = 2,
    AgErrNumeric = 3,
    /// Invalid configuration, including malformed backbone JSON.
    AgErrConfig = 4,
    /// Malformed or mismatched checkpoint.
    AgErrLoad = 5,
    AgErrIo = 6,
    AgErrDegenerate = 7,
    /// A Rust panic was caught; the handle involved should be freed.
    AgErrPanic = 8,
    AgErrUtf8 = 9,
}

/// Opaque model handle.
pub struct AgModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(AgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Contract(_) => AgStatus::AgErrContract,
            Error::Numeric(_) => AgStatus::AgErrNumeric,
            Error::Config(_) => AgStatus::AgErrConfig,
            Error::Load { .. } => AgStatus::AgErrLoad,
            Error::Degenerate(_) => AgStatus::AgErrDegenerate,
            Error::Io { .. } => AgStatus::AgErrIo,
        };
        Failure(status, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn guard(f: impl FnOnce() -> Outcome) -> AgStatus {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure(AgStatus::AgErrPanic, format!("panic: {msg}")))
    });
    match result {
        Ok(()) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            AgStatus::AgOk
        }
        Err(Failure(status, msg)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = msg);
            status
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(AgStatus::AgErrNull, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(AgStatus::AgErrUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn backbone_arg(json: *const c_char) -> Result<BackboneConfig, Failure> {
    if json.is_null() {
        return Ok(BackboneConfig::default());
    }
    let text = str_arg(json, "backbone_json")?;
    serde_json::from_str(text)
        .map_err(|e| Failure(AgStatus::AgErrConfig, format!("backbone_json: {e}")))
}

unsafe fn model_ref<'a>(m: *const AgModel) -> Result<&'a Model, Failure> {
    non_null(m, "model")?;
    Ok(&(*m).model)
}

unsafe fn mask_arg(mask: *const u8, height: usize, width: usize) -> Result<Mask, Failure> {
    non_null(mask, "mask")?;
    let values = std::slice::from_raw_parts(mask, height * width);
    Ok(Mask::from_values(height, width, values)?)
}

/// Copies the calling thread's last error message into `buf` (truncated
/// and NUL-terminated if `len` is too small) and returns the full message
/// length in bytes, excluding the terminator. `buf` may be null to query
/// the length.
#[no_mangle]
pub unsafe extern "C" fn ag_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates a freshly initialized model. `backbone_json` may be null for the
/// default architecture.
#[no_mangle]
pub unsafe extern "C" fn ag_model_new(
    backbone_json: *const c_char,
    classes: usize,
    input_size: usize,
    seed: u64,
    out: *mut *mut AgModel,
) -> AgStatus {
    guard(|| {
        non_null(out, "out")?;
        let model = Model::init(backbone_arg(backbone_json)?, classes, input_size, seed)?;
        *out = Box::into_raw(Box::new(AgModel { model }));
        Ok(())
    })
}

/// Loads checkpoint weights into a model with the given architecture.
#[no_mangle]
pub unsafe extern "C" fn ag_model_load(
    path: *const c_char,
    backbone_json: *const c_char,
    classes: usize,
    input_size: usize,
    out: *mut *mut AgModel,
) -> AgStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = Path::new(str_arg(path, "path")?);
        let mut model = Model::init(backbone_arg(backbone_json)?, classes, input_size, 0)?;
        let params = ParamStore::load(path)?;
        model
            .network
            .check_params(&params)
            .map_err(|e| Failure(AgStatus::AgErrLoad, format!("{}: {e}", path.display())))?;
        model.params = params;
        *out = Box::into_raw(Box::new(AgModel { model }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ag_model_save(model: *const AgModel, path: *const c_char) -> AgStatus {
    guard(|| {
        let m = model_ref(model)?;
        m.params.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Releases a model; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ag_model_free(model: *mut AgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of classes, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ag_model_classes(model: *const AgModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.classes())
}

/// Square input side length, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ag_model_input_size(model: *const AgModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.input_size)
}

unsafe fn images_arg(
    pixels: *const f32,
    n: usize,
    height: usize,
    width: usize,
    size: usize,
) -> Result<Vec<Image>, Failure> {
    non_null(pixels, "pixels")?;
    let plane = height * width;
    let all = std::slice::from_raw_parts(pixels, n * plane);
    all.chunks(plane.max(1))
        .take(n)
        .map(|p| Ok(prepare(&Image::new(height, width, p.to_vec())?, None, size).0))
        .collect()
}

/// Class probabilities for `n` grayscale images of `height`×`width`
/// (row-major, values in [0, 1]). Writes `n × classes` floats to `probs`.
#[no_mangle]
pub unsafe extern "C" fn ag_model_predict(
    model: *const AgModel,
    pixels: *const f32,
    n: usize,
    height: usize,
    width: usize,
    probs: *mut f32,
) -> AgStatus {
    guard(|| {
        let m = model_ref(model)?;
        non_null(probs, "probs")?;
        let images = images_arg(pixels, n, height, width, m.input_size)?;
        let out = std::slice::from_raw_parts_mut(probs, n * m.classes());
        for (bundle, dst) in m
            .attention(&images)?
            .iter()
            .zip(out.chunks_mut(m.classes()))
        {
            dst.copy_from_slice(&bundle.probs);
        }
        Ok(())
    })
}

/// Soft attention maps for one image: writes `classes × S × S` floats, where
/// `S` is the model input size; each class slice sums to 1.
#[no_mangle]
pub unsafe extern "C" fn ag_model_attention(
    model: *const AgModel,
    pixels: *const f32,
    height: usize,
    width: usize,
    maps: *mut f32,
) -> AgStatus {
    guard(|| {
        let m = model_ref(model)?;
        non_null(maps, "maps")?;
        let images = images_arg(pixels, 1, height, width, m.input_size)?;
        let bundle = &m.attention(&images)?[0];
        let s = m.input_size;
        std::slice::from_raw_parts_mut(maps, m.classes() * s * s)
            .copy_from_slice(bundle.target.data());
        Ok(())
    })
}

/// Guidance term for one sample: `target` holds `classes × height × width`
/// attention values, `mask` one `height × width` focus region (nonzero means
/// annotated) shared by every class.
#[no_mangle]
pub unsafe extern "C" fn ag_guidance_term(
    target: *const f64,
    classes: usize,
    height: usize,
    width: usize,
    mask: *const u8,
    lambda: f64,
    out: *mut f64,
) -> AgStatus {
    guard(|| {
        non_null(target, "target")?;
        non_null(out, "out")?;
        let values = std::slice::from_raw_parts(target, classes * height * width).to_vec();
        let t = Tensor::new([classes, height, width], values)?;
        let plane = mask_arg(mask, height, width)?;
        let m = FocusRegionMask::unified(
            &plane.data,
            height,
            width,
            classes,
            GuidanceStyle::Segmentation,
        )?;
        *out = guidance_term(&t, &m, lambda, DEFAULT_EPS)?;
        Ok(())
    })
}

/// Filled bounding box of a non-empty mask; `out` receives 0/1 bytes.
#[no_mangle]
pub unsafe extern "C" fn ag_mask_to_bbox(
    mask: *const u8,
    height: usize,
    width: usize,
    out: *mut u8,
) -> AgStatus {
    guard(|| {
        non_null(out, "out")?;
        let b = mask_to_bbox(&mask_arg(mask, height, width)?)?;
        std::slice::from_raw_parts_mut(out, height * width).copy_from_slice(&b.data);
        Ok(())
    })
}

/// Skeleton scribble of a non-empty mask, dilated to `line_width` pixels.
#[no_mangle]
pub unsafe extern "C" fn ag_mask_to_scribble(
    mask: *const u8,
    height: usize,
    width: usize,
    line_width: usize,
    out: *mut u8,
) -> AgStatus {
    guard(|| {
        non_null(out, "out")?;
        let s = mask_to_scribble(&mask_arg(mask, height, width)?, line_width)?;
        std::slice::from_raw_parts_mut(out, height * width).copy_from_slice(&s.data);
        Ok(())
    })
}
