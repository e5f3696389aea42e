//! C interface to kwseq.
//!
//! Every fallible call returns a [`KwsStatus`]; on failure the message is kept
//! per thread and can be read with [`kws_last_error`]. Handles are opaque and
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use kwseq::acoustic::FrameClassifier;
use kwseq::evalcli::{compute_eer, model_topology, Corpus, Decoder, ExperimentConfig, PostMode, SynthUtterance, System};
use kwseq::lattice::{ScoreKind, ScoreMatrix};
use kwseq::KwsError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KwsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Dimension = 6,
    NoPath = 7,
    BufferTooSmall = 8,
    Panic = 9,
    Other = 10,
}

/// A trained frame classifier.
pub struct KwsModel {
    model: FrameClassifier,
}

/// A model bound to a corpus's keywords with one prepared post-processing mode.
pub struct KwsSpotter {
    decoder: Decoder,
    peak: kwseq::postproc::PeakConfig,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(KwsStatus, String);

impl From<KwsError> for Failure {
    fn from(e: KwsError) -> Self {
        let code = match &e {
            KwsError::Config(_) => KwsStatus::Config,
            KwsError::Io(_) => KwsStatus::Io,
            KwsError::Format(_) | KwsError::Json(_) => KwsStatus::Format,
            KwsError::DimensionMismatch { .. } | KwsError::LengthMismatch { .. } => KwsStatus::Dimension,
            KwsError::NoPath | KwsError::Infeasible { .. } => KwsStatus::NoPath,
            KwsError::EmptyScores => KwsStatus::InvalidArgument,
            _ => KwsStatus::Other,
        };
        Failure(code, e.to_string())
    }
}

fn fail<T>(code: KwsStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(code, msg.into()))
}

/// Runs `f`, recording its error message and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KwsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            KwsStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            KwsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(KwsStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p).to_str().or_else(|_| fail(KwsStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(KwsStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn features_arg(p: *const f64, frames: usize, dim: usize) -> Result<ScoreMatrix, Failure> {
    let len = frames.checked_mul(dim).ok_or_else(|| Failure(KwsStatus::InvalidArgument, "feature size overflows".into()))?;
    let data = slice_arg(p, len, "features")?;
    Ok(ScoreMatrix::from_vec(frames, dim, data.to_vec(), ScoreKind::Feature)?)
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn kws_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn kws_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model file written by `kwseq train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kws_model_load(path: *const c_char, out: *mut *mut KwsModel) -> KwsStatus {
    guard(|| {
        if out.is_null() {
            return fail(KwsStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let model = FrameClassifier::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(KwsModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`kws_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kws_model_free(model: *mut KwsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Feature dimension expected per frame, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kws_model_input_dim(model: *const KwsModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.input_dim)
}

/// Number of output classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kws_model_num_units(model: *const KwsModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_units())
}

/// Output frames produced for `frames` input frames.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kws_model_output_frames(model: *const KwsModel, frames: usize) -> usize {
    model.as_ref().map_or(0, |m| m.model.output_frames(frames))
}

/// Log-posteriors of a row-major `frames x dim` feature matrix, written
/// row-major to `out` (`out_len` must hold output frames times units).
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn kws_model_forward(
    model: *const KwsModel,
    features: *const f64,
    frames: usize,
    dim: usize,
    out: *mut f64,
    out_len: usize,
) -> KwsStatus {
    guard(|| {
        let Some(m) = model.as_ref() else { return fail(KwsStatus::NullPointer, "model is null") };
        if out.is_null() {
            return fail(KwsStatus::NullPointer, "out is null");
        }
        let y = m.model.forward(&features_arg(features, frames, dim)?)?;
        let values = y.as_slice();
        if out_len < values.len() {
            return fail(KwsStatus::BufferTooSmall, format!("need {} values, got room for {out_len}", values.len()));
        }
        std::slice::from_raw_parts_mut(out, values.len()).copy_from_slice(values);
        Ok(())
    })
}

/// Prepares keyword scoring for a model and the corpus in `data_dir`.
///
/// `mode` is `smooth`, `kwfiller` or `med`. `config_json` may be null for
/// defaults, otherwise an experiment configuration.
///
/// # Safety
/// String arguments must be NUL-terminated (or null where allowed) and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kws_spotter_new(
    data_dir: *const c_char,
    model_path: *const c_char,
    mode: *const c_char,
    config_json: *const c_char,
    out: *mut *mut KwsSpotter,
) -> KwsStatus {
    guard(|| {
        if out.is_null() {
            return fail(KwsStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let data_dir = str_arg(data_dir, "data_dir")?;
        let model_path = str_arg(model_path, "model_path")?;
        let mode: PostMode = str_arg(mode, "mode")?.parse()?;
        let cfg = if config_json.is_null() {
            ExperimentConfig::default()
        } else {
            ExperimentConfig::from_json(str_arg(config_json, "config_json")?)?
        };
        let corpus = Corpus::load(Path::new(data_dir))?;
        let model = FrameClassifier::load(Path::new(model_path))?;
        let system = System::new(&corpus, model_topology(&model)?)?;
        let decoder = Decoder::prepare(mode, &system, &model, &corpus.dev, &cfg)?;
        let names = system
            .keywords
            .iter()
            .map(|(n, _)| CString::new(n.as_str()).or_else(|_| fail(KwsStatus::Format, "keyword contains NUL")))
            .collect::<Result<_, _>>()?;
        *out = Box::into_raw(Box::new(KwsSpotter { decoder, peak: cfg.peak, names }));
        Ok(())
    })
}

/// # Safety
/// `spotter` must come from [`kws_spotter_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kws_spotter_free(spotter: *mut KwsSpotter) {
    if !spotter.is_null() {
        drop(Box::from_raw(spotter));
    }
}

/// # Safety
/// `spotter` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kws_spotter_num_keywords(spotter: *const KwsSpotter) -> usize {
    spotter.as_ref().map_or(0, |s| s.names.len())
}

/// Name of keyword `index`, owned by the spotter; null if out of range.
///
/// # Safety
/// `spotter` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kws_spotter_keyword(spotter: *const KwsSpotter, index: usize) -> *const c_char {
    spotter.as_ref().and_then(|s| s.names.get(index)).map_or(ptr::null(), |n| n.as_ptr())
}

/// One detection score per keyword for a row-major `frames x dim` feature
/// matrix. Larger is more confident; 0 is the estimated decision threshold.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn kws_spotter_score(
    spotter: *const KwsSpotter,
    features: *const f64,
    frames: usize,
    dim: usize,
    scores: *mut f64,
    num_scores: usize,
) -> KwsStatus {
    guard(|| {
        let Some(s) = spotter.as_ref() else { return fail(KwsStatus::NullPointer, "spotter is null") };
        if scores.is_null() {
            return fail(KwsStatus::NullPointer, "scores is null");
        }
        if num_scores < s.names.len() {
            return fail(KwsStatus::BufferTooSmall, format!("need {} scores, got room for {num_scores}", s.names.len()));
        }
        let utt = SynthUtterance {
            id: String::new(),
            words: Vec::new(),
            features: features_arg(features, frames, dim)?,
            phones: Vec::new(),
        };
        let r = s.decoder.decode(&utt, s.peak)?;
        std::slice::from_raw_parts_mut(scores, r.scores.len()).copy_from_slice(&r.scores);
        Ok(())
    })
}

/// Equal error rate of positive and negative trial scores, with the
/// threshold at which it is reached.
///
/// # Safety
/// Score pointers must be valid for their lengths; outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn kws_eer(
    positives: *const f64,
    num_positives: usize,
    negatives: *const f64,
    num_negatives: usize,
    eer: *mut f64,
    threshold: *mut f64,
) -> KwsStatus {
    guard(|| {
        if eer.is_null() || threshold.is_null() {
            return fail(KwsStatus::NullPointer, "output pointer is null");
        }
        let pos = slice_arg(positives, num_positives, "positives")?;
        let neg = slice_arg(negatives, num_negatives, "negatives")?;
        let (e, t, _) = compute_eer(pos, neg)?;
        *eer = e;
        *threshold = t;
        Ok(())
    })
}
