//! C ABI over the irbseg core.
//!
//! Every fallible function returns an [`IrbStatus`]. On failure the message is
//! kept per thread and can be read with [`irb_last_error`]. Panics are caught
//! at the boundary and reported as [`IrbStatus::Panic`].
//!
//! Handles ([`IrbConfusion`], [`IrbManifest`], [`IrbModel`]) are opaque; each
//! has a matching `_free` function that accepts null.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use image::RgbImage;
use irbseg::datamodel::{self, ClassEntry};
use irbseg::irb::{self, BlendPolicy};
use irbseg::metrics::{self, ConfusionMatrix};
use irbseg::styletransfer::{self, SpectralConfig};
use irbseg::trainer::{self, Checkpoint, LoadedModel};
use irbseg::{ClassSet, DatasetManifest, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Load = 4,
    Validation = 5,
    Capacity = 6,
    Evaluation = 7,
    Contract = 8,
    Config = 9,
    Panic = 10,
    Other = 11,
}

impl From<&Error> for IrbStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Argument(_) | Error::Manifest(_) => IrbStatus::InvalidArgument,
            Error::Io { .. } => IrbStatus::Io,
            Error::Load { .. } => IrbStatus::Load,
            Error::Validation { .. } => IrbStatus::Validation,
            Error::Capacity { .. } => IrbStatus::Capacity,
            Error::Evaluation(_) => IrbStatus::Evaluation,
            Error::Contract(_) => IrbStatus::Contract,
            Error::Config { .. } => IrbStatus::Config,
            _ => IrbStatus::Other,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("NULs removed"));
}

fn fail(status: IrbStatus, msg: impl Into<String>) -> IrbStatus {
    set_last_error(msg);
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), IrbStatus>) -> IrbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            IrbStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(IrbStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn core_err(e: Error) -> IrbStatus {
    fail(IrbStatus::from(&e), e.to_string())
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), IrbStatus> {
    if p.is_null() {
        Err(fail(IrbStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or point to a NUL-terminated string.
unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, IrbStatus> {
    non_null(p, name)?;
    // SAFETY: non-null and NUL-terminated per the caller contract.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| fail(IrbStatus::InvalidArgument, format!("`{name}` is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Message of the last failed call on this thread, empty after a success.
///
/// The pointer stays valid until the next irbseg call on the same thread.
#[no_mangle]
pub extern "C" fn irb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn irb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Percentage change of `new_value` over `baseline`.
///
/// # Safety
/// `out` must be null or valid for one `double` write.
#[no_mangle]
pub unsafe extern "C" fn irb_relative_improvement(new_value: f64, baseline: f64, out: *mut f64) -> IrbStatus {
    guard(|| {
        non_null(out, "out")?;
        let v = metrics::relative_improvement(new_value, baseline).map_err(core_err)?;
        // SAFETY: checked non-null; validity per the caller contract.
        unsafe { *out = v };
        Ok(())
    })
}

/// Orders `n` foreground classes worst to best by IoU; NaN means undefined and ranks as 0.
///
/// # Safety
/// `class_ids` and `iou` must be readable for `n` elements, `out_ranking` writable for `n`.
#[no_mangle]
pub unsafe extern "C" fn irb_rank_classes(
    class_ids: *const u8,
    iou: *const f64,
    n: usize,
    out_ranking: *mut u8,
) -> IrbStatus {
    guard(|| {
        non_null(class_ids, "class_ids")?;
        non_null(iou, "iou")?;
        non_null(out_ranking, "out_ranking")?;
        // SAFETY: lengths per the caller contract.
        let (ids, values) = unsafe { (std::slice::from_raw_parts(class_ids, n), std::slice::from_raw_parts(iou, n)) };
        let map: std::collections::BTreeMap<u8, Option<f64>> = ids
            .iter()
            .zip(values)
            .map(|(&id, &v)| (id, (!v.is_nan()).then_some(v)))
            .collect();
        if map.len() != n {
            return Err(fail(IrbStatus::InvalidArgument, "class ids repeat"));
        }
        let ranking = irb::rank_classes(&map).map_err(core_err)?;
        // SAFETY: `ranking.len() == n` and the output holds `n` bytes.
        unsafe { std::slice::from_raw_parts_mut(out_ranking, n) }.copy_from_slice(&ranking);
        Ok(())
    })
}

/// Splits `total` blend images over `n` ranked classes (worst first) by `weights`.
///
/// `out_counts[i]` receives the count for `ranking[i]`.
///
/// # Safety
/// `ranking` and `weights` must be readable for `n` elements, `out_counts` writable for `n`.
#[no_mangle]
pub unsafe extern "C" fn irb_allocate_blend(
    total: usize,
    ranking: *const u8,
    weights: *const u32,
    n: usize,
    out_counts: *mut usize,
) -> IrbStatus {
    guard(|| {
        non_null(ranking, "ranking")?;
        non_null(weights, "weights")?;
        non_null(out_counts, "out_counts")?;
        // SAFETY: lengths per the caller contract.
        let (ranking, weights) =
            unsafe { (std::slice::from_raw_parts(ranking, n), std::slice::from_raw_parts(weights, n)) };
        if total == 0 || weights.contains(&0) {
            return Err(fail(IrbStatus::InvalidArgument, "budget and weights must be positive"));
        }
        let policy = BlendPolicy {
            ratio_weights: weights.to_vec(),
            ..BlendPolicy::new(total)
        };
        let alloc = irb::allocate_blend(&policy, ranking).map_err(core_err)?;
        // SAFETY: output holds `n` elements.
        let out = unsafe { std::slice::from_raw_parts_mut(out_counts, n) };
        for (o, id) in out.iter_mut().zip(ranking) {
            *o = alloc.per_class_counts[id];
        }
        Ok(())
    })
}

/// Restyles an interleaved RGB `source` with the low-frequency amplitude of `target`.
///
/// # Safety
/// `source`, `target` and `out` must each span `width * height * 3` bytes.
#[no_mangle]
pub unsafe extern "C" fn irb_spectral_blend(
    source: *const u8,
    target: *const u8,
    width: u32,
    height: u32,
    beta: f64,
    out: *mut u8,
) -> IrbStatus {
    guard(|| {
        non_null(source, "source")?;
        non_null(target, "target")?;
        non_null(out, "out")?;
        let len = width as usize * height as usize * 3;
        if len == 0 {
            return Err(fail(IrbStatus::InvalidArgument, "image is empty"));
        }
        // SAFETY: lengths per the caller contract.
        let (src, tgt) = unsafe { (std::slice::from_raw_parts(source, len), std::slice::from_raw_parts(target, len)) };
        let src = RgbImage::from_raw(width, height, src.to_vec()).expect("length checked");
        let tgt = RgbImage::from_raw(width, height, tgt.to_vec()).expect("length checked");
        let config = SpectralConfig {
            beta,
            ..Default::default()
        };
        let blended = styletransfer::spectral_blend(&src, &tgt, &config).map_err(core_err)?;
        // SAFETY: output spans `len` bytes.
        unsafe { std::slice::from_raw_parts_mut(out, len) }.copy_from_slice(blended.as_raw());
        Ok(())
    })
}

/// Opaque confusion-matrix accumulator.
pub struct IrbConfusion {
    cm: ConfusionMatrix,
}

/// New accumulator for classes `0..num_classes`, class 0 being background.
///
/// # Safety
/// `out` must be null or valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn irb_confusion_new(num_classes: u32, out: *mut *mut IrbConfusion) -> IrbStatus {
    guard(|| {
        non_null(out, "out")?;
        if !(1..=256).contains(&num_classes) {
            return Err(fail(IrbStatus::InvalidArgument, "num_classes must lie in 1..=256"));
        }
        let entries = (0..num_classes)
            .map(|id| ClassEntry {
                id: id as u8,
                name: format!("C{id}"),
                is_foreground: id > 0,
            })
            .collect();
        let class_set = ClassSet::new(entries).map_err(core_err)?;
        let handle = Box::new(IrbConfusion {
            cm: ConfusionMatrix::zeros(&class_set),
        });
        // SAFETY: checked non-null.
        unsafe { *out = Box::into_raw(handle) };
        Ok(())
    })
}

/// Adds `len` (ground truth, prediction) label pairs.
///
/// # Safety
/// `cm` must come from [`irb_confusion_new`]; `gt` and `pred` must span `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn irb_confusion_accumulate(
    cm: *mut IrbConfusion,
    gt: *const u8,
    pred: *const u8,
    len: usize,
) -> IrbStatus {
    guard(|| {
        non_null(cm, "cm")?;
        non_null(gt, "gt")?;
        non_null(pred, "pred")?;
        // SAFETY: valid handle and lengths per the caller contract.
        let (cm, gt, pred) = unsafe {
            (
                &mut *cm,
                std::slice::from_raw_parts(gt, len),
                std::slice::from_raw_parts(pred, len),
            )
        };
        cm.cm.accumulate(gt, pred).map_err(core_err)
    })
}

/// Writes per-class IoU and recall (NaN where undefined) plus their means.
///
/// Any output pointer may be null to skip it; per-class arrays hold `num_classes` doubles.
///
/// # Safety
/// `cm` must come from [`irb_confusion_new`]; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn irb_confusion_scores(
    cm: *const IrbConfusion,
    out_iou: *mut f64,
    out_acc: *mut f64,
    out_miou: *mut f64,
    out_macc: *mut f64,
) -> IrbStatus {
    guard(|| {
        non_null(cm, "cm")?;
        // SAFETY: valid handle per the caller contract.
        let cm = unsafe { &(*cm).cm };
        let iou = metrics::iou_per_class(cm);
        let acc = metrics::acc_per_class(cm);
        let write = |dst: *mut f64, values: &[Option<f64>]| {
            if !dst.is_null() {
                // SAFETY: caller provides `num_classes` doubles.
                let out = unsafe { std::slice::from_raw_parts_mut(dst, values.len()) };
                for (o, v) in out.iter_mut().zip(values) {
                    *o = v.unwrap_or(f64::NAN);
                }
            }
        };
        write(out_iou, &iou);
        write(out_acc, &acc);
        if !out_miou.is_null() {
            let v = metrics::mean_iou(&iou).map_err(core_err)?;
            // SAFETY: checked non-null.
            unsafe { *out_miou = v };
        }
        if !out_macc.is_null() {
            let v = metrics::mean_acc(&acc).map_err(core_err)?;
            // SAFETY: checked non-null.
            unsafe { *out_macc = v };
        }
        Ok(())
    })
}

/// # Safety
/// `cm` must be null or come from [`irb_confusion_new`], and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn irb_confusion_free(cm: *mut IrbConfusion) {
    if !cm.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(cm) });
    }
}

/// Opaque dataset manifest.
pub struct IrbManifest {
    manifest: DatasetManifest,
}

/// Loads and validates a JSON manifest.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn irb_manifest_load(path: *const c_char, out: *mut *mut IrbManifest) -> IrbStatus {
    guard(|| {
        non_null(out, "out")?;
        // SAFETY: per the caller contract.
        let path = unsafe { path_arg(path, "path") }?;
        let manifest = datamodel::load_manifest(&path).map_err(core_err)?;
        // SAFETY: checked non-null.
        unsafe { *out = Box::into_raw(Box::new(IrbManifest { manifest })) };
        Ok(())
    })
}

/// Number of samples, 0 for null.
///
/// # Safety
/// `manifest` must be null or come from [`irb_manifest_load`].
#[no_mangle]
pub unsafe extern "C" fn irb_manifest_len(manifest: *const IrbManifest) -> usize {
    if manifest.is_null() {
        return 0;
    }
    // SAFETY: valid handle per the caller contract.
    unsafe { (*manifest).manifest.len() }
}

/// # Safety
/// `manifest` must be null or come from [`irb_manifest_load`], and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn irb_manifest_free(manifest: *mut IrbManifest) {
    if !manifest.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(manifest) });
    }
}

/// Opaque trained model restored from a checkpoint directory.
pub struct IrbModel {
    model: LoadedModel,
    num_classes: u32,
}

/// # Safety
/// `checkpoint_dir` must be a NUL-terminated string; `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn irb_model_open(checkpoint_dir: *const c_char, out: *mut *mut IrbModel) -> IrbStatus {
    guard(|| {
        non_null(out, "out")?;
        // SAFETY: per the caller contract.
        let dir = unsafe { path_arg(checkpoint_dir, "checkpoint_dir") }?;
        let checkpoint = Checkpoint::open(&dir).map_err(core_err)?;
        let num_classes = checkpoint.class_set().len() as u32;
        let model = checkpoint.load_model().map_err(core_err)?;
        // SAFETY: checked non-null.
        unsafe { *out = Box::into_raw(Box::new(IrbModel { model, num_classes })) };
        Ok(())
    })
}

/// Number of output classes, 0 for null.
///
/// # Safety
/// `model` must be null or come from [`irb_model_open`].
#[no_mangle]
pub unsafe extern "C" fn irb_model_num_classes(model: *const IrbModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    // SAFETY: valid handle per the caller contract.
    unsafe { (*model).num_classes }
}

/// Predicts one label per pixel of an interleaved RGB image.
///
/// Without `resize`, both sides must be multiples of 8.
///
/// # Safety
/// `model` must come from [`irb_model_open`]; `rgb` spans `width * height * 3`
/// bytes and `out_labels` `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn irb_model_predict(
    model: *const IrbModel,
    rgb: *const u8,
    width: u32,
    height: u32,
    resize: bool,
    out_labels: *mut u8,
) -> IrbStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(rgb, "rgb")?;
        non_null(out_labels, "out_labels")?;
        let plane = width as usize * height as usize;
        if plane == 0 {
            return Err(fail(IrbStatus::InvalidArgument, "image is empty"));
        }
        // SAFETY: valid handle and lengths per the caller contract.
        let (model, data) = unsafe { (&(*model).model, std::slice::from_raw_parts(rgb, plane * 3)) };
        let image = RgbImage::from_raw(width, height, data.to_vec()).expect("length checked");
        let labels = model.predict(&image, resize).map_err(core_err)?;
        // SAFETY: output spans `plane` bytes.
        unsafe { std::slice::from_raw_parts_mut(out_labels, plane) }.copy_from_slice(labels.as_raw());
        Ok(())
    })
}

/// Scores the model on every sample of `manifest`.
///
/// # Safety
/// Handles must come from their constructors; outputs valid for one `double` write each.
#[no_mangle]
pub unsafe extern "C" fn irb_model_evaluate(
    model: *const IrbModel,
    manifest: *const IrbManifest,
    out_miou: *mut f64,
    out_macc: *mut f64,
) -> IrbStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(manifest, "manifest")?;
        non_null(out_miou, "out_miou")?;
        non_null(out_macc, "out_macc")?;
        // SAFETY: valid handles per the caller contract.
        let (model, manifest) = unsafe { (&(*model).model, &(*manifest).manifest) };
        let report = trainer::evaluate_with(model, manifest).map_err(core_err)?;
        // SAFETY: checked non-null.
        unsafe {
            *out_miou = report.miou;
            *out_macc = report.macc;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from [`irb_model_open`], and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn irb_model_free(model: *mut IrbModel) {
    if !model.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(model) });
    }
}
