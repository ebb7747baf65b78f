//! C ABI over the dermclass toolkit.
//!
//! Every fallible call returns a [`DermStatus`]; on failure a message is
//! kept per thread and read back with [`derm_last_error`]. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `_free` function. Panics never unwind into C; they surface as
//! `DERM_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dermclass::dataset::{imagenet_normalize, load_and_resize, ImageTensor};
use dermclass::inference::predict;
use dermclass::metrics::{balanced_accuracy, confusion_matrix, ConfusionMatrix};
use dermclass::model::ModelAssembly;
use dermclass::schedule::{PhaseSpec, SchedulePlan, Shape};
use dermclass::taxonomy::{Category, N_CATEGORIES};
use dermclass::trainer::load_model;
use dermclass::Error;

/// Number of diagnostic categories; probability buffers hold this many values.
pub const DERM_N_CATEGORIES: usize = 7;

/// Number of layer groups addressed by schedule queries.
pub const DERM_N_GROUPS: usize = 3;

const _: () = assert!(DERM_N_CATEGORIES == N_CATEGORIES);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DermStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Image = 5,
    Checkpoint = 6,
    Numeric = 7,
    Panic = 8,
}

impl From<&Error> for DermStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => Self::Io,
            Error::Format(_) | Error::AmbiguousLabel { .. } | Error::DuplicateId(_) => Self::Format,
            Error::ImageLoad { .. } | Error::MissingImages(_) => Self::Image,
            Error::Checkpoint { .. } | Error::Weights(_) | Error::Assembly(_) => Self::Checkpoint,
            Error::Numeric(_) | Error::NonFiniteLoss { .. } => Self::Numeric,
            _ => Self::InvalidArgument,
        }
    }
}

/// Learning-rate schedule handle.
pub struct DermSchedule {
    plan: SchedulePlan,
}

/// Trained classifier handle.
pub struct DermModel {
    model: ModelAssembly,
    image_side: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let mut msg = msg.into().into_bytes();
    msg.retain(|&b| b != 0);
    let c = CString::new(msg).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(DermStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(DermStatus::from(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(DermStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DermStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DermStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            DermStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(DermStatus::NullPointer, format!("`{what}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, Failure> {
    non_null(p, what)?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not valid UTF-8")))?;
    Ok(Path::new(s))
}

/// Message describing the last failed call on this thread, or null. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn derm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, nul-terminated code (`"MEL"`, `"NV"`, ...) of category `index`,
/// or null when out of range.
#[no_mangle]
pub extern "C" fn derm_category_code(index: usize) -> *const c_char {
    const CODES: [&CStr; DERM_N_CATEGORIES] = [c"MEL", c"NV", c"BCC", c"AKIEC", c"BKL", c"DF", c"VASC"];
    debug_assert!(Category::ALL.iter().zip(CODES).all(|(c, s)| s.to_str() == Ok(c.code())));
    CODES.get(index).map_or(ptr::null(), |c| c.as_ptr())
}

/// Numerically stable softmax of `n` logits into `out` (also `n` long).
///
/// # Safety
/// `logits` and `out` must point to `n` readable / writable doubles.
#[no_mangle]
pub unsafe extern "C" fn derm_softmax(logits: *const f64, n: usize, out: *mut f64) -> DermStatus {
    guard(|| {
        non_null(logits, "logits")?;
        non_null(out, "out")?;
        let xs = std::slice::from_raw_parts(logits, n);
        let probs = dermclass::model::softmax(xs)?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&probs);
        Ok(())
    })
}

/// Fills a row-major 7x7 confusion matrix (rows true, columns predicted)
/// from `n` predicted and true category indices.
///
/// # Safety
/// `preds` and `truths` must point to `n` values; `out` to 49 writable counts.
#[no_mangle]
pub unsafe extern "C" fn derm_confusion_matrix(
    preds: *const usize,
    truths: *const usize,
    n: usize,
    out: *mut u64,
) -> DermStatus {
    guard(|| {
        non_null(out, "out")?;
        let (p, t) = if n == 0 {
            (&[][..], &[][..])
        } else {
            non_null(preds, "preds")?;
            non_null(truths, "truths")?;
            (
                std::slice::from_raw_parts(preds, n),
                std::slice::from_raw_parts(truths, n),
            )
        };
        let cm = confusion_matrix(p, t)?;
        let flat = std::slice::from_raw_parts_mut(out, N_CATEGORIES * N_CATEGORIES);
        for (dst, src) in flat.iter_mut().zip(cm.counts.iter().flatten()) {
            *dst = *src;
        }
        Ok(())
    })
}

/// Mean per-category recall of a row-major 7x7 confusion matrix, over the
/// categories with at least one true instance.
///
/// # Safety
/// `counts` must point to 49 readable values; `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn derm_balanced_accuracy(counts: *const u64, out: *mut f64) -> DermStatus {
    guard(|| {
        non_null(counts, "counts")?;
        non_null(out, "out")?;
        let flat = std::slice::from_raw_parts(counts, N_CATEGORIES * N_CATEGORIES);
        let mut cm = ConfusionMatrix::default();
        for (i, row) in cm.counts.iter_mut().enumerate() {
            row.copy_from_slice(&flat[i * N_CATEGORIES..(i + 1) * N_CATEGORIES]);
        }
        *out = balanced_accuracy(&cm)?;
        Ok(())
    })
}

fn boxed<T>(value: T, out: *mut *mut T) {
    // SAFETY: callers check `out` for null first.
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

/// Builds the default two-phase schedule: four one-epoch head-only cycles,
/// then whole-network cycles of 1, 2, 4 and 8 epochs, group rates
/// `base_lr / [9, 3, 1]`, cosine decay.
///
/// # Safety
/// `out` must be a valid location for a handle pointer.
#[no_mangle]
pub unsafe extern "C" fn derm_schedule_new(
    base_lr: f64,
    steps_per_epoch: usize,
    out: *mut *mut DermSchedule,
) -> DermStatus {
    guard(|| {
        non_null(out, "out")?;
        let plan = SchedulePlan::new(
            vec![PhaseSpec::head_only(base_lr), PhaseSpec::fine_tune(base_lr)],
            steps_per_epoch,
            Shape::Cosine,
        )?;
        boxed(DermSchedule { plan }, out);
        Ok(())
    })
}

/// Builds the schedule described by the `[train]` section of a TOML run
/// configuration for a training set of `n_train` images.
///
/// # Safety
/// `config_toml` must be a nul-terminated string; `out` a valid location.
#[no_mangle]
pub unsafe extern "C" fn derm_schedule_from_config(
    config_toml: *const c_char,
    n_train: usize,
    out: *mut *mut DermSchedule,
) -> DermStatus {
    guard(|| {
        non_null(config_toml, "config_toml")?;
        non_null(out, "out")?;
        let text = CStr::from_ptr(config_toml)
            .to_str()
            .map_err(|_| invalid("config is not valid UTF-8"))?;
        let cfg = dermclass::config::RunConfig::parse(text)?;
        let plan = cfg.train.plan(n_train)?;
        boxed(DermSchedule { plan }, out);
        Ok(())
    })
}

/// Total number of optimizer steps, or 0 for a null handle.
///
/// # Safety
/// `schedule` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn derm_schedule_total_steps(schedule: *const DermSchedule) -> usize {
    schedule.as_ref().map_or(0, |s| s.plan.total_steps())
}

/// Total number of epochs, or 0 for a null handle.
///
/// # Safety
/// `schedule` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn derm_schedule_total_epochs(schedule: *const DermSchedule) -> usize {
    schedule.as_ref().map_or(0, |s| s.plan.total_epochs())
}

/// Learning rate of layer group `group` (0 = lowest) at global step `step`.
/// Frozen groups report 0.
///
/// # Safety
/// `schedule` must be a live handle; `out` one writable double.
#[no_mangle]
pub unsafe extern "C" fn derm_schedule_lr(
    schedule: *const DermSchedule,
    step: usize,
    group: usize,
    out: *mut f64,
) -> DermStatus {
    guard(|| {
        non_null(schedule, "schedule")?;
        non_null(out, "out")?;
        *out = (*schedule).plan.lr_at(step, group)?;
        Ok(())
    })
}

/// Releases a schedule handle. Null is a no-op.
///
/// # Safety
/// `schedule` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn derm_schedule_free(schedule: *mut DermSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Loads a trained model from a checkpoint file.
///
/// # Safety
/// `checkpoint_path` must be a nul-terminated string; `out` a valid location.
#[no_mangle]
pub unsafe extern "C" fn derm_model_load(
    checkpoint_path: *const c_char,
    out: *mut *mut DermModel,
) -> DermStatus {
    guard(|| {
        let path = path_arg(checkpoint_path, "checkpoint_path")?;
        non_null(out, "out")?;
        let (model, _) = load_model(path)?;
        boxed(
            DermModel {
                model,
                image_side: dermclass::dataset::IMAGE_SIDE,
            },
            out,
        );
        Ok(())
    })
}

/// Class probabilities for one already-normalized image laid out
/// channel-major (`3 x height x width`, RGB).
///
/// # Safety
/// `model` must be a live handle, `chw` must hold `3 * height * width`
/// doubles and `out_probs` room for 7.
#[no_mangle]
pub unsafe extern "C" fn derm_model_predict(
    model: *const DermModel,
    chw: *const f64,
    height: usize,
    width: usize,
    out_probs: *mut f64,
) -> DermStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(chw, "chw")?;
        non_null(out_probs, "out_probs")?;
        if height == 0 || width == 0 {
            return Err(invalid("image must be non-empty"));
        }
        let data = std::slice::from_raw_parts(chw, 3 * height * width).to_vec();
        let arr = ndarray::Array3::from_shape_vec((3, height, width), data)
            .map_err(|e| invalid(e.to_string()))?;
        let img = ImageTensor {
            data: arr,
            normalized: true,
        };
        let pred = predict(&(*model).model, &img)?;
        std::slice::from_raw_parts_mut(out_probs, N_CATEGORIES).copy_from_slice(&pred.probs);
        Ok(())
    })
}

/// Decodes, resizes and normalizes an image file, then classifies it.
/// Writes 7 probabilities and, when `out_label` is non-null, the index of
/// the most probable category.
///
/// # Safety
/// `model` must be a live handle, `image_path` a nul-terminated string and
/// `out_probs` room for 7 doubles.
#[no_mangle]
pub unsafe extern "C" fn derm_model_predict_file(
    model: *const DermModel,
    image_path: *const c_char,
    out_probs: *mut f64,
    out_label: *mut usize,
) -> DermStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out_probs, "out_probs")?;
        let path = path_arg(image_path, "image_path")?;
        let m = &*model;
        let img = imagenet_normalize(&load_and_resize(path, m.image_side)?)?;
        let pred = predict(&m.model, &img)?;
        std::slice::from_raw_parts_mut(out_probs, N_CATEGORIES).copy_from_slice(&pred.probs);
        if !out_label.is_null() {
            *out_label = pred.label();
        }
        Ok(())
    })
}

/// Releases a model handle. Null is a no-op.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn derm_model_free(model: *mut DermModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
