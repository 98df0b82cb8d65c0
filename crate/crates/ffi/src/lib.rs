//! C ABI over the `mdcorner` pipeline.
//!
//! Objects are opaque handles created by `mdc_*_new`/loader functions and
//! released by the matching `*_free`. Every fallible call returns an
//! [`MdcStatus`]; the message of the last failure on the calling thread is
//! available from [`mdc_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mdcorner::config::PipelineConfig;
use mdcorner::graphnet::Model;
use mdcorner::pipeline::{echo_to_cloud, run_pipeline};
use mdcorner::sim::{ActivityClass, EchoMatrix, PlannedSample, Split};
use mdcorner::Error;
use ndarray::Array2;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MdcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Numerical = 6,
    Cardinality = 7,
    Label = 8,
    Panic = 9,
    Other = 10,
}

/// Pipeline configuration.
pub struct MdcConfig {
    inner: PipelineConfig,
}

/// Simulated complex echo.
pub struct MdcEcho {
    inner: EchoMatrix,
}

/// Fused corner cloud, `points x 3`.
pub struct MdcCloud {
    points: Array2<f64>,
}

/// Trained classifier.
pub struct MdcModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MdcStatus {
    match e {
        Error::Config(_) | Error::RangeOutOfWindow { .. } => MdcStatus::Config,
        Error::Io { .. } => MdcStatus::Io,
        Error::Format(_) | Error::Schema(_) | Error::Json(_) => MdcStatus::Format,
        Error::SingularSystem { .. } | Error::NonFiniteGradient(_) => MdcStatus::Numerical,
        Error::InsufficientCorners { .. } | Error::Cardinality { .. } => MdcStatus::Cardinality,
        Error::LabelOutOfRange { .. } | Error::EmptyMatrix => MdcStatus::Label,
        Error::Shape(_) => MdcStatus::InvalidArgument,
        #[allow(unreachable_patterns)]
        _ => MdcStatus::Other,
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (MdcStatus, String)>) -> MdcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MdcStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MdcStatus::Panic
        }
    }
}

fn lib(e: Error) -> (MdcStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MdcStatus, String) {
    (MdcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MdcStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (MdcStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread; empty after success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mdc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mdc_config_default(out: *mut *mut MdcConfig) -> MdcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, MdcConfig { inner: PipelineConfig::default() });
        Ok(())
    })
}

/// Defaults overlaid with a JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mdc_config_from_json(json: *const c_char, out: *mut *mut MdcConfig) -> MdcStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = PipelineConfig::from_json(text).map_err(lib)?;
        put(out, MdcConfig { inner });
        Ok(())
    })
}

/// Serializes a configuration; release the string with [`mdc_string_free`].
///
/// # Safety
/// `cfg` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mdc_config_to_json(cfg: *const MdcConfig, out: *mut *mut c_char) -> MdcStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = CString::new(cfg.inner.to_json()).map_err(|e| (MdcStatus::Other, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mdc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `cfg` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mdc_config_free(cfg: *mut MdcConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Simulates one echo of `class_index` (0..12) with the configured radar
/// and scene.
///
/// # Safety
/// `cfg` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mdc_simulate(
    cfg: *const MdcConfig,
    class_index: u32,
    height_m: f64,
    seed: u64,
    out: *mut *mut MdcEcho,
) -> MdcStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let class = ActivityClass::from_index(class_index as usize)
            .ok_or_else(|| (MdcStatus::InvalidArgument, format!("class index {class_index} out of range")))?;
        let sample = PlannedSample {
            id: String::new(),
            class,
            split: Split::Train,
            height_m,
            seed,
        };
        let ds = &cfg.inner.dataset;
        ds.scene.clone().with_height(height_m).validate().map_err(lib)?;
        let inner = sample.simulate(&ds.radar, &ds.scene).map_err(lib)?;
        put(out, MdcEcho { inner });
        Ok(())
    })
}

/// Fast-time samples and pulses of an echo.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mdc_echo_dims(echo: *const MdcEcho, rows: *mut usize, cols: *mut usize) -> MdcStatus {
    guard(|| {
        let echo = echo.as_ref().ok_or_else(|| null("echo"))?;
        if rows.is_null() || cols.is_null() {
            return Err(null("rows/cols"));
        }
        (*rows, *cols) = echo.inner.data.dim();
        Ok(())
    })
}

/// # Safety
/// `echo` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mdc_echo_free(echo: *mut MdcEcho) {
    if !echo.is_null() {
        drop(Box::from_raw(echo));
    }
}

/// Maps, corners and fusion for one echo.
///
/// # Safety
/// `cfg` and `echo` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mdc_echo_to_cloud(
    cfg: *const MdcConfig,
    echo: *const MdcEcho,
    out: *mut *mut MdcCloud,
) -> MdcStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let echo = echo.as_ref().ok_or_else(|| null("echo"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (_, _, _, cloud) = echo_to_cloud(&echo.inner, &cfg.inner).map_err(lib)?;
        put(out, MdcCloud { points: cloud.points });
        Ok(())
    })
}

/// Number of points in a cloud (0 for null).
///
/// # Safety
/// `cloud` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mdc_cloud_len(cloud: *const MdcCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.points.nrows())
}

/// Copies the cloud row-major into `buf`, which holds `len` doubles
/// (at least `3 * points`).
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mdc_cloud_copy(cloud: *const MdcCloud, buf: *mut f64, len: usize) -> MdcStatus {
    guard(|| {
        let cloud = cloud.as_ref().ok_or_else(|| null("cloud"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let need = cloud.points.len();
        if len < need {
            return Err((MdcStatus::InvalidArgument, format!("buffer holds {len} values, {need} needed")));
        }
        for (i, v) in cloud.points.iter().enumerate() {
            *buf.add(i) = *v;
        }
        Ok(())
    })
}

/// # Safety
/// `cloud` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mdc_cloud_free(cloud: *mut MdcCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Loads a model directory written by training.
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mdc_model_load(dir: *const c_char, out: *mut *mut MdcModel) -> MdcStatus {
    guard(|| {
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = Model::load(&dir).map_err(lib)?;
        put(out, MdcModel { inner });
        Ok(())
    })
}

/// Classifies `n_points x 3` row-major points. Writes the label and, when
/// `probs` is non-null, `n_probs` class probabilities.
///
/// # Safety
/// `points` must hold `3 * n_points` doubles and `probs` (if non-null)
/// `n_probs` doubles.
#[no_mangle]
pub unsafe extern "C" fn mdc_model_predict(
    model: *const MdcModel,
    points: *const f64,
    n_points: usize,
    label: *mut u32,
    probs: *mut f64,
    n_probs: usize,
) -> MdcStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if points.is_null() || label.is_null() {
            return Err(null("points/label"));
        }
        let data = std::slice::from_raw_parts(points, 3 * n_points).to_vec();
        let cloud = Array2::from_shape_vec((n_points, 3), data).map_err(|e| (MdcStatus::InvalidArgument, e.to_string()))?;
        let p = model.inner.predict(&cloud).map_err(lib)?;
        *label = p.label as u32;
        if !probs.is_null() {
            if n_probs < p.probs.len() {
                return Err((
                    MdcStatus::InvalidArgument,
                    format!("probability buffer holds {n_probs}, {} needed", p.probs.len()),
                ));
            }
            ptr::copy_nonoverlapping(p.probs.as_ptr(), probs, p.probs.len());
        }
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mdc_model_free(model: *mut MdcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs every stage into `dir`.
///
/// # Safety
/// `cfg` must come from this library; `dir` must be a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn mdc_run_pipeline(cfg: *const MdcConfig, dir: *const c_char) -> MdcStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        run_pipeline(&cfg.inner, &dir).map(|_| ()).map_err(lib)
    })
}
