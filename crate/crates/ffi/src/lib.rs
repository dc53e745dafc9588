//! C ABI over the detector: load a trained model, score images and compute
//! attention-rollout heatmaps.
//!
//! Every function returns a [`BolfStatus`]. On failure a human-readable
//! message is available from [`bolf_last_error`] on the same thread until the
//! next call that fails. Handles are opaque and must be released with
//! [`bolf_model_free`]. A model handle may be shared between threads for
//! concurrent inference.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use bolf::cli::{load_weights, RunConfig};
use bolf::model::{attention_rollout, forward, init_params, ModelConfig, ModelParams, Mode};
use bolf::tensor::Tensor;
use bolf::Error;

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BolfStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Bad configuration file or value.
    Config = 2,
    /// Missing or malformed input data or weights.
    Data = 3,
    /// Non-finite values or another numerical failure.
    Numeric = 4,
    /// A buffer length does not match the model's input or output size.
    Shape = 5,
    /// A string argument is not valid UTF-8.
    Utf8 = 6,
    /// An internal panic was caught at the boundary.
    Panic = 7,
}

/// A loaded model. Opaque to C.
pub struct BolfModel {
    cfg: ModelConfig,
    params: ModelParams<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BolfStatus {
    match e {
        Error::Config(_) => BolfStatus::Config,
        Error::Data(_) | Error::Format(_) | Error::Io(_) | Error::Metric(_) => BolfStatus::Data,
        Error::Shape { .. } => BolfStatus::Shape,
        _ => BolfStatus::Numeric,
    }
}

struct Fail(BolfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BolfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BolfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            BolfStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(BolfStatus::NullArgument, format!("{what} is null"))
}

unsafe fn opt_path(p: *const c_char, what: &str) -> Result<Option<PathBuf>, Fail> {
    if p.is_null() {
        return Ok(None);
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(BolfStatus::Utf8, format!("{what} is not UTF-8")))?;
    Ok(Some(PathBuf::from(s)))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Fail> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

unsafe fn image(model: &BolfModel, pixels: *const f32, len: usize) -> Result<Tensor<f32>, Fail> {
    if pixels.is_null() {
        return Err(null("pixels"));
    }
    let c = &model.cfg;
    let want = c.height * c.width * c.channels;
    if len != want {
        return Err(Fail(
            BolfStatus::Shape,
            format!("image has {len} values, the model expects {}x{}x{} = {want}", c.height, c.width, c.channels),
        ));
    }
    let data = std::slice::from_raw_parts(pixels, len).to_vec();
    Ok(Tensor::new(&[c.height, c.width, c.channels], data)?)
}

fn publish(model: BolfModel, out: *mut *mut BolfModel) {
    unsafe { *out = Box::into_raw(Box::new(model)) };
}

/// Loads a model. `config_path` may be null for the default configuration.
/// `weights_path` may be null to use the configuration's weights path.
///
/// # Safety
/// String arguments must be null or nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bolf_model_load(
    config_path: *const c_char,
    weights_path: *const c_char,
    out: *mut *mut BolfModel,
) -> BolfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = load_config(opt_path(config_path, "config_path")?.as_deref())?;
        let weights = opt_path(weights_path, "weights_path")?.unwrap_or_else(|| cfg.weights_path());
        let params = load_weights(&weights, &cfg.model)?;
        publish(BolfModel { cfg: cfg.model, params }, out);
        Ok(())
    })
}

/// Creates an untrained model with the configuration's initializer.
///
/// # Safety
/// `config_path` must be null or nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bolf_model_init(config_path: *const c_char, seed: u64, out: *mut *mut BolfModel) -> BolfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = load_config(opt_path(config_path, "config_path")?.as_deref())?;
        let params = init_params(&cfg.model, seed, cfg.init.scheme());
        publish(BolfModel { cfg: cfg.model, params }, out);
        Ok(())
    })
}

/// Releases a model. Null is accepted and ignored.
///
/// # Safety
/// `model` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bolf_model_free(model: *mut BolfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input image size (`height × width × channels`, row-major, values in
/// `[0, 1]`) and the number of patches in a heatmap.
///
/// # Safety
/// `model` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn bolf_model_dims(
    model: *const BolfModel,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
    patches: *mut usize,
) -> BolfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if height.is_null() || width.is_null() || channels.is_null() || patches.is_null() {
            return Err(null("output pointer"));
        }
        *height = m.cfg.height;
        *width = m.cfg.width;
        *channels = m.cfg.channels;
        *patches = m.cfg.num_patches();
        Ok(())
    })
}

/// Probability that the image is manipulated.
///
/// # Safety
/// `model` must be a live handle, `pixels` must hold `len` floats and
/// `probability` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bolf_predict(
    model: *const BolfModel,
    pixels: *const f32,
    len: usize,
    probability: *mut f64,
) -> BolfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if probability.is_null() {
            return Err(null("probability"));
        }
        let img = image(m, pixels, len)?;
        *probability = forward(&img, &m.params, &m.cfg, Mode::Eval)?.fake_probability();
        Ok(())
    })
}

/// Attention-rollout heatmap over the patches (row-major patch grid, sums to
/// 1) plus the manipulation probability. `probability` may be null.
///
/// # Safety
/// `model` must be a live handle, `pixels` must hold `len` floats and
/// `heatmap` must have room for `heatmap_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bolf_rollout(
    model: *const BolfModel,
    pixels: *const f32,
    len: usize,
    heatmap: *mut f64,
    heatmap_len: usize,
    probability: *mut f64,
) -> BolfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if heatmap.is_null() {
            return Err(null("heatmap"));
        }
        if heatmap_len != m.cfg.num_patches() {
            return Err(Fail(
                BolfStatus::Shape,
                format!("heatmap has room for {heatmap_len} values, the model has {} patches", m.cfg.num_patches()),
            ));
        }
        let img = image(m, pixels, len)?;
        let pred = forward(&img, &m.params, &m.cfg, Mode::Eval)?;
        let heat = attention_rollout(&pred.record)?;
        std::slice::from_raw_parts_mut(heatmap, heatmap_len).copy_from_slice(heat.data());
        if !probability.is_null() {
            *probability = pred.fake_probability();
        }
        Ok(())
    })
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bolf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn bolf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
