//! C ABI over the `mclnn` library.
//!
//! Objects are opaque handles created by `*_generate`, `*_load` or `*_build`
//! functions and released with the matching `*_free`. Fallible functions
//! return an [`MclnnStatus`]; on failure [`mclnn_last_error`] describes the
//! problem. Panics never cross the boundary: they are caught and reported as
//! [`MclnnStatus::Panic`].
//!
//! Handles are not synchronized. A handle may be read from several threads at
//! once, but must not be freed while in use.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use mclnn::config::ExperimentConfig;
use mclnn::mask::{generate_mask, BinaryMask, MaskSpec};
use mclnn::model::{load_model, save_model, segment_size, LayerSpec, ModelSpec, TrainedModel};
use mclnn::{Error, FrameBlock, Matrix};

/// Result of a fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MclnnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    Panic = 6,
}

/// A binary band mask.
pub struct MclnnMask {
    inner: BinaryMask,
}

/// A classifier with its parameters and normalization statistics.
pub struct MclnnModel {
    inner: TrainedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("NULs removed"));
}

struct Failure(MclnnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => MclnnStatus::Io,
            Error::Load(_) | Error::Feature(_) | Error::Dataset(_) => MclnnStatus::Format,
            Error::Model(mclnn::model::ModelError::Segment { .. }) => MclnnStatus::Shape,
            _ => MclnnStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: MclnnStatus, msg: &str) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `f`, recording any error or panic for [`mclnn_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MclnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MclnnStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MclnnStatus::Panic
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(MclnnStatus::NullPointer, &format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MclnnStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message for the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn mclnn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Frames one segment must have for a stack of layers with the given
/// orders and `extra_frames` frames left for pooling. Returns 0 if `orders`
/// is null while `layer_count > 0`.
///
/// # Safety
/// `orders` must point to `layer_count` readable values.
#[no_mangle]
pub unsafe extern "C" fn mclnn_segment_size(orders: *const usize, layer_count: usize, extra_frames: usize) -> usize {
    if orders.is_null() && layer_count > 0 {
        return 0;
    }
    let orders = if layer_count == 0 {
        &[][..]
    } else {
        std::slice::from_raw_parts(orders, layer_count)
    };
    let spec = ModelSpec {
        feature_length: 1,
        layers: orders.iter().map(|&n| LayerSpec::unmasked(1, n)).collect(),
        extra_frames,
        dense_width: 1,
        class_count: 1,
        activation: mclnn::layers::ActivationKind::Linear,
        allow_zero_order: true,
    };
    segment_size(&spec)
}

/// Builds the band mask for feature length `l`, width `e`, bandwidth `bw`
/// and overlap `ov`.
///
/// # Safety
/// `out` must be a valid pointer to write a handle to.
#[no_mangle]
pub unsafe extern "C" fn mclnn_mask_generate(
    l: usize,
    e: usize,
    bw: usize,
    ov: i64,
    out: *mut *mut MclnnMask,
) -> MclnnStatus {
    guard(|| {
        if out.is_null() {
            return fail(MclnnStatus::NullPointer, "out is null");
        }
        let spec = MaskSpec::new(l, e, bw, ov).map_err(Error::from)?;
        *out = Box::into_raw(Box::new(MclnnMask {
            inner: generate_mask(&spec),
        }));
        Ok(())
    })
}

/// Mask rows (feature length), or 0 for a null handle.
///
/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mclnn_mask_rows(mask: *const MclnnMask) -> usize {
    mask.as_ref().map_or(0, |m| m.inner.spec().feature_length())
}

/// Mask columns (hidden width), or 0 for a null handle.
///
/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mclnn_mask_cols(mask: *const MclnnMask) -> usize {
    mask.as_ref().map_or(0, |m| m.inner.spec().hidden_width())
}

/// Copies the mask row-major into `out` as 0/1 bytes. `len` must equal
/// rows * cols.
///
/// # Safety
/// `mask` must be a live handle and `out` must have `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mclnn_mask_copy(mask: *const MclnnMask, out: *mut u8, len: usize) -> MclnnStatus {
    guard(|| {
        let Some(mask) = mask.as_ref() else {
            return fail(MclnnStatus::NullPointer, "mask is null");
        };
        if out.is_null() {
            return fail(MclnnStatus::NullPointer, "out is null");
        }
        let cells = mask.inner.cells();
        if len != cells.len() {
            return fail(
                MclnnStatus::Shape,
                &format!("buffer holds {len} cells, mask has {}", cells.len()),
            );
        }
        let dst = std::slice::from_raw_parts_mut(out, len);
        for (d, &c) in dst.iter_mut().zip(cells) {
            *d = u8::from(c);
        }
        Ok(())
    })
}

/// Releases a mask. Null is ignored.
///
/// # Safety
/// `mask` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mclnn_mask_free(mask: *mut MclnnMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Builds a freshly initialized model from a named preset (`table3`,
/// `small`, `gradcheck`).
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mclnn_model_build_preset(
    preset: *const c_char,
    class_count: usize,
    seed: u64,
    out: *mut *mut MclnnModel,
) -> MclnnStatus {
    guard(|| {
        if out.is_null() {
            return fail(MclnnStatus::NullPointer, "out is null");
        }
        let name = c_str(preset, "preset")?;
        let cfg = ExperimentConfig::preset(name).map_err(Error::from)?;
        let spec = cfg.model_spec(class_count).map_err(Error::from)?;
        let model = TrainedModel::build(&spec, seed).map_err(Error::from)?;
        *out = Box::into_raw(Box::new(MclnnModel { inner: model }));
        Ok(())
    })
}

/// Loads a model file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mclnn_model_load(path: *const c_char, out: *mut *mut MclnnModel) -> MclnnStatus {
    guard(|| {
        if out.is_null() {
            return fail(MclnnStatus::NullPointer, "out is null");
        }
        let model = load_model(c_str(path, "path")?)?;
        *out = Box::into_raw(Box::new(MclnnModel { inner: model }));
        Ok(())
    })
}

/// Writes a model file.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mclnn_model_save(model: *const MclnnModel, path: *const c_char) -> MclnnStatus {
    guard(|| {
        let Some(model) = model.as_ref() else {
            return fail(MclnnStatus::NullPointer, "model is null");
        };
        save_model(&model.inner, c_str(path, "path")?)?;
        Ok(())
    })
}

/// Frames per input segment, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mclnn_model_segment_size(model: *const MclnnModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.segment_size())
}

/// Features per frame, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mclnn_model_feature_length(model: *const MclnnModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.spec().feature_length)
}

/// Number of output classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mclnn_model_class_count(model: *const MclnnModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.class_count())
}

/// Class probabilities for one segment given row-major by frame
/// (`segment_size * feature_length` values, already normalized).
///
/// # Safety
/// `model` must be a live handle, `segment` must have `segment_len`
/// readable values and `probabilities` `class_count` writable values.
#[no_mangle]
pub unsafe extern "C" fn mclnn_model_forward(
    model: *const MclnnModel,
    segment: *const f64,
    segment_len: usize,
    probabilities: *mut f64,
    class_count: usize,
) -> MclnnStatus {
    guard(|| {
        let Some(model) = model.as_ref() else {
            return fail(MclnnStatus::NullPointer, "model is null");
        };
        if segment.is_null() || probabilities.is_null() {
            return fail(MclnnStatus::NullPointer, "buffer is null");
        }
        let m = &model.inner;
        let (q, l) = (m.segment_size(), m.spec().feature_length);
        if segment_len != q * l {
            return fail(
                MclnnStatus::Shape,
                &format!("segment has {segment_len} values, model needs {q} x {l}"),
            );
        }
        if class_count != m.class_count() {
            return fail(
                MclnnStatus::Shape,
                &format!(
                    "output holds {class_count} values, model has {} classes",
                    m.class_count()
                ),
            );
        }
        let values = std::slice::from_raw_parts(segment, segment_len).to_vec();
        let block = Matrix::from_vec(q, l, values).map_err(|e| Failure(MclnnStatus::Shape, e.to_string()))?;
        let block = FrameBlock::new(block).map_err(|e| Failure(MclnnStatus::Shape, e.to_string()))?;
        let probs = m.forward(&block).map_err(Error::from)?;
        std::slice::from_raw_parts_mut(probabilities, class_count).copy_from_slice(&probs);
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mclnn_model_free(model: *mut MclnnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
