//! C ABI over the `sonotag` toolkit.
//!
//! Objects cross the boundary as opaque handles created by `snt_*` functions
//! and released by the matching `*_free`. Every fallible call returns an
//! [`SntStatus`]; on failure [`snt_last_error`] describes the cause for the
//! calling thread. Panics never unwind into C: they surface as
//! `SNT_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use sonotag::attention;
use sonotag::blobseg::{self, BinaryMask, SegParams};
use sonotag::dsp::{self, AudioClip, Scale, Spectrogram, StftParams};
use sonotag::metrics::{self, BBox};
use sonotag::nnet::{self, checkpoint, Network, Topology, NET_SIZE};
use sonotag::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SntStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Topology = 6,
    Numeric = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SntTopology {
    Classifier = 0,
    Unet = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SntAttention {
    GradCam = 0,
    GuidedBackprop = 1,
}

/// Inclusive box: frames `t0..=t1`, bins `f0..=f1` (bin 0 = lowest
/// frequency).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SntBox {
    pub t0: usize,
    pub t1: usize,
    pub f0: usize,
    pub f1: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SntSegParams {
    pub factor: f64,
    pub close_size: usize,
    pub dilate_size: usize,
    pub median_k: usize,
    pub min_area: usize,
}

pub struct SntSpectrogram(Spectrogram);
pub struct SntMask(BinaryMask);
pub struct SntBoxList(Vec<BBox>);
pub struct SntModel(Network);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn status_of(e: &Error) -> SntStatus {
    match e {
        Error::WavUnreadable { .. } | Error::Io { .. } => SntStatus::Io,
        Error::WavUnsupported { .. }
        | Error::WavEmpty { .. }
        | Error::Checkpoint(_)
        | Error::Format(_)
        | Error::Json(_)
        | Error::Csv(_) => SntStatus::Format,
        Error::ShapeMismatch { .. } => SntStatus::Shape,
        Error::TopologyMismatch { .. } | Error::NoConvLayer => SntStatus::Topology,
        Error::NonFiniteLoss { .. } | Error::NonFinite { .. } | Error::BackwardBeforeForward => {
            SntStatus::Numeric
        }
        _ => SntStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SntStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SntStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_last_error(format!("null pointer: {what}"));
            SntStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_last_error(msg);
            SntStatus::InvalidArgument
        }
        Ok(Err(Fail::Core(e))) => {
            let status = status_of(&e);
            set_last_error(e.to_string());
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            SntStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    let s = deref(p, "path")?;
    let s = CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Fail::Arg("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn snt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn snt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn stft(log_scale: bool) -> StftParams {
    if log_scale {
        StftParams::default()
    } else {
        StftParams::linear()
    }
}

/// Spectrogram of `n` mono samples at `sample_rate` with the default STFT
/// (window 512, hop 706). `log_scale` != 0 selects dB magnitudes.
///
/// # Safety
/// `samples` must point to `n` readable doubles and `out` to a writable
/// handle slot.
#[no_mangle]
pub unsafe extern "C" fn snt_spectrogram_from_samples(
    samples: *const f64,
    n: usize,
    sample_rate: u32,
    log_scale: i32,
    out: *mut *mut SntSpectrogram,
) -> SntStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let samples = slice(samples, n, "samples")?;
        let clip = AudioClip::new(samples.to_vec(), sample_rate)?;
        let spec = dsp::stft_spectrogram(&clip, &stft(log_scale != 0))?;
        *out = boxed(SntSpectrogram(spec));
        Ok(())
    })
}

/// Spectrogram of a WAV file (channels averaged).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn snt_spectrogram_from_wav(
    path: *const c_char,
    log_scale: i32,
    out: *mut *mut SntSpectrogram,
) -> SntStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let clip = dsp::load_wav(path_arg(path)?)?;
        *out = boxed(SntSpectrogram(dsp::stft_spectrogram(&clip, &stft(log_scale != 0))?));
        Ok(())
    })
}

/// # Safety
/// `spec` must be a live handle; `rows` and `cols` writable.
#[no_mangle]
pub unsafe extern "C" fn snt_spectrogram_shape(
    spec: *const SntSpectrogram,
    rows: *mut usize,
    cols: *mut usize,
) -> SntStatus {
    guard(|| {
        let (r, c) = deref(spec, "spec")?.0.shape();
        *out_ptr(rows, "rows")? = r;
        *out_ptr(cols, "cols")? = c;
        Ok(())
    })
}

/// Copies the row-major values (row 0 = lowest frequency) into `buf`, which
/// must hold exactly `rows * cols` doubles.
///
/// # Safety
/// `spec` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn snt_spectrogram_values(
    spec: *const SntSpectrogram,
    buf: *mut f64,
    len: usize,
) -> SntStatus {
    guard(|| {
        let values = deref(spec, "spec")?.0.values.as_slice();
        if len != values.len() {
            return Err(Fail::Arg(format!("buffer holds {len} values, need {}", values.len())));
        }
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(values);
        Ok(())
    })
}

/// # Safety
/// `spec` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn snt_spectrogram_free(spec: *mut SntSpectrogram) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

#[no_mangle]
pub extern "C" fn snt_seg_params_default() -> SntSegParams {
    let d = SegParams::default();
    SntSegParams {
        factor: d.factor,
        close_size: d.close_size,
        dilate_size: d.dilate_size,
        median_k: d.median_k,
        min_area: d.min_area,
    }
}

/// Blind segmentation of a linear-magnitude spectrogram. `params` may be
/// NULL for the defaults. Either output slot may be NULL when unwanted.
///
/// # Safety
/// `spec` must be a live handle; non-NULL pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn snt_segment(
    spec: *const SntSpectrogram,
    params: *const SntSegParams,
    mask_out: *mut *mut SntMask,
    boxes_out: *mut *mut SntBoxList,
) -> SntStatus {
    guard(|| {
        let spec = &deref(spec, "spec")?.0;
        let p = params.as_ref().copied().unwrap_or_else(|| snt_seg_params_default());
        let params = SegParams {
            factor: p.factor,
            close_size: p.close_size,
            dilate_size: p.dilate_size,
            median_k: p.median_k,
            min_area: p.min_area,
        };
        let (mask, blobs) = blobseg::segment(spec, &params)?;
        if let Some(slot) = mask_out.as_mut() {
            *slot = boxed(SntMask(mask));
        }
        if let Some(slot) = boxes_out.as_mut() {
            *slot = boxed(SntBoxList(blobs.iter().map(|b| b.bbox).collect()));
        }
        Ok(())
    })
}

/// # Safety
/// `mask` must be a live handle; `rows` and `cols` writable.
#[no_mangle]
pub unsafe extern "C" fn snt_mask_shape(mask: *const SntMask, rows: *mut usize, cols: *mut usize) -> SntStatus {
    guard(|| {
        let (r, c) = deref(mask, "mask")?.0.shape();
        *out_ptr(rows, "rows")? = r;
        *out_ptr(cols, "cols")? = c;
        Ok(())
    })
}

/// Copies the mask as row-major 0/1 bytes into `buf` of exactly
/// `rows * cols` bytes.
///
/// # Safety
/// `mask` must be a live handle and `buf` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn snt_mask_bits(mask: *const SntMask, buf: *mut u8, len: usize) -> SntStatus {
    guard(|| {
        let bits = deref(mask, "mask")?.0.bits();
        if len != bits.len() {
            return Err(Fail::Arg(format!("buffer holds {len} bytes, need {}", bits.len())));
        }
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        for (dst, &b) in std::slice::from_raw_parts_mut(buf, len).iter_mut().zip(bits) {
            *dst = u8::from(b);
        }
        Ok(())
    })
}

/// Dice coefficient of two equally shaped masks.
///
/// # Safety
/// Both masks must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn snt_mask_dice(a: *const SntMask, b: *const SntMask, out: *mut f64) -> SntStatus {
    guard(|| {
        let v = metrics::mask_dice(&deref(a, "a")?.0, &deref(b, "b")?.0)?;
        *out_ptr(out, "out")? = v;
        Ok(())
    })
}

/// # Safety
/// `mask` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn snt_mask_free(mask: *mut SntMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Number of boxes in the list (0 for NULL).
///
/// # Safety
/// `list` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn snt_box_list_len(list: *const SntBoxList) -> usize {
    list.as_ref().map_or(0, |l| l.0.len())
}

/// # Safety
/// `list` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn snt_box_list_get(list: *const SntBoxList, index: usize, out: *mut SntBox) -> SntStatus {
    guard(|| {
        let list = &deref(list, "list")?.0;
        let b = list
            .get(index)
            .ok_or_else(|| Fail::Arg(format!("index {index} out of range for {} boxes", list.len())))?;
        *out_ptr(out, "out")? = SntBox {
            t0: b.t0,
            t1: b.t1,
            f0: b.f0,
            f1: b.f1,
        };
        Ok(())
    })
}

/// # Safety
/// `list` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn snt_box_list_free(list: *mut SntBoxList) {
    if !list.is_null() {
        drop(Box::from_raw(list));
    }
}

fn to_bbox(b: &SntBox) -> Result<BBox, Fail> {
    Ok(BBox::new(b.t0, b.t1, b.f0, b.f1)?)
}

/// Intersection over union of two boxes.
///
/// # Safety
/// `a`, `b` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn snt_iou(a: *const SntBox, b: *const SntBox, out: *mut f64) -> SntStatus {
    guard(|| {
        let v = metrics::iou(&to_bbox(deref(a, "a")?)?, &to_bbox(deref(b, "b")?)?);
        *out_ptr(out, "out")? = v;
        Ok(())
    })
}

/// ROC AUC of `scores` against 0/1 `labels`, ties counted half.
///
/// # Safety
/// `labels` and `scores` must hold `n` readable elements; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn snt_roc_auc(labels: *const u8, scores: *const f64, n: usize, out: *mut f64) -> SntStatus {
    guard(|| {
        let v = metrics::roc_auc(slice(labels, n, "labels")?, slice(scores, n, "scores")?)?;
        *out_ptr(out, "out")? = v;
        Ok(())
    })
}

/// YOLO label text (`0 cx cy w h` per line) for `n` boxes on an
/// `img_w x img_h` image. The string is released with [`snt_string_free`].
///
/// # Safety
/// `boxes` must hold `n` readable boxes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn snt_export_yolo(
    boxes: *const SntBox,
    n: usize,
    img_w: usize,
    img_h: usize,
    out: *mut *mut c_char,
) -> SntStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let boxes = slice(boxes, n, "boxes")?
            .iter()
            .map(to_bbox)
            .collect::<Result<Vec<_>, _>>()?;
        let text = attention::export_yolo_labels(&boxes, img_w, img_h)?;
        *out = CString::new(text).expect("no interior nul").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn snt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn snt_model_load(path: *const c_char, out: *mut *mut SntModel) -> SntStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(SntModel(checkpoint::load(path_arg(path)?)?));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn snt_model_topology(model: *const SntModel, out: *mut SntTopology) -> SntStatus {
    guard(|| {
        *out_ptr(out, "out")? = match deref(model, "model")?.0.topology() {
            Topology::Classifier => SntTopology::Classifier,
            Topology::Unet => SntTopology::Unet,
        };
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn snt_model_free(model: *mut SntModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// U-net mask on the spectrogram's own grid (pixels with probability
/// `>= threshold`). The spectrogram must be linear-magnitude.
///
/// # Safety
/// `model` and `spec` must be live handles; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn snt_predict_mask(
    model: *const SntModel,
    spec: *const SntSpectrogram,
    threshold: f64,
    out: *mut *mut SntMask,
) -> SntStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let mask = nnet::predict_mask(&deref(model, "model")?.0, &deref(spec, "spec")?.0, threshold)?;
        *out = boxed(SntMask(mask));
        Ok(())
    })
}

/// Classifier probability that the clip contains a call.
///
/// # Safety
/// `model` and `spec` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn snt_predict_probability(
    model: *const SntModel,
    spec: *const SntSpectrogram,
    out: *mut f64,
) -> SntStatus {
    guard(|| {
        let p = nnet::predict_probability(&deref(model, "model")?.0, &deref(spec, "spec")?.0)?;
        *out_ptr(out, "out")? = p;
        Ok(())
    })
}

/// Boxes around attention regions of a classifier, on the spectrogram grid.
///
/// # Safety
/// `model` and `spec` must be live handles; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn snt_attention_boxes(
    model: *const SntModel,
    spec: *const SntSpectrogram,
    kind: SntAttention,
    threshold: f64,
    min_area: usize,
    out: *mut *mut SntBoxList,
) -> SntStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let net = &deref(model, "model")?.0;
        let spec = &deref(spec, "spec")?.0;
        if spec.scale != Scale::Linear {
            return Err(Fail::Arg("attention needs a linear-magnitude spectrogram".into()));
        }
        let input = nnet::prepare_input(spec, NET_SIZE)?;
        let grid = match kind {
            SntAttention::GradCam => attention::grad_cam(net, &input)?,
            SntAttention::GuidedBackprop => attention::guided_backprop(net, &input)?,
        };
        let (rows, cols) = spec.shape();
        let native = attention::Heatmap::normalized(grid.values().resize_bilinear(rows, cols));
        *out = boxed(SntBoxList(attention::heatmap_to_bboxes(&native, threshold, min_area)?));
        Ok(())
    })
}
