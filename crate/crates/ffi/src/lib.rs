//! C ABI for `pdl`.
//!
//! Every function returns a [`PdlStatus`]; on failure a description is
//! available from [`pdl_last_error_message`] on the same thread until the next
//! call. Matrices are dense row-major `double` buffers. Models are opaque
//! handles released with [`pdl_model_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use nalgebra::DMatrix;
use pdl::bench::{pipeline_from_model, Pipeline};
use pdl::classifier::LinearModel;
use pdl::datasets::RawImage;
use pdl::model::ModelFile;
use pdl::selection::{
    affinity_propagation, build_similarity, default_variance_floor, select_k_exemplars, ApParams,
    CovarianceMatrix, ExemplarSet, SimilarityMatrix,
};
use pdl::PdlError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    MissingSection = 5,
    DimensionMismatch = 6,
    InsufficientData = 7,
    Degenerate = 8,
    Panic = 9,
    Other = 10,
}

/// A model file loaded into an encoding pipeline, plus its classifier when
/// present.
pub struct PdlModel {
    pipeline: Pipeline,
    classifier: Option<LinearModel>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(PdlStatus, String);

impl From<PdlError> for Failure {
    fn from(e: PdlError) -> Self {
        let status = match e {
            PdlError::InvalidArgument(_) | PdlError::Config(_) | PdlError::InvalidLabel { .. } => {
                PdlStatus::InvalidArgument
            }
            PdlError::Io { .. } => PdlStatus::Io,
            PdlError::MalformedFile { .. } | PdlError::Format(_) => PdlStatus::Format,
            PdlError::MissingSection(_) => PdlStatus::MissingSection,
            PdlError::DimensionMismatch { .. } => PdlStatus::DimensionMismatch,
            PdlError::InsufficientData(_) => PdlStatus::InsufficientData,
            PdlError::Degenerate(_) => PdlStatus::Degenerate,
            _ => PdlStatus::Other,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PdlStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(PdlStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PdlStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PdlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            PdlStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn model_ref<'a>(m: *const PdlModel) -> Result<&'a PdlModel, Failure> {
    m.as_ref().ok_or_else(|| null("model"))
}

fn square(data: &[f64], n: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, data)
}

fn write_selection(sel: &ExemplarSet, exemplars: &mut [usize], assignment: &mut [usize]) {
    exemplars[..sel.indices.len()].copy_from_slice(&sel.indices);
    assignment.copy_from_slice(&sel.assignment);
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next `pdl_*` call on the same thread.
#[no_mangle]
pub extern "C" fn pdl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Load the model file at `path` (UTF-8, nul-terminated). With `rescale`
/// nonzero, selected features pass through the stored rescaling transform.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pdl_model_open(
    path: *const c_char,
    rescale: i32,
    out: *mut *mut PdlModel,
) -> PdlStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        let file = ModelFile::load(Path::new(path))?;
        let (pipeline, _, _) = pipeline_from_model(&file, rescale != 0)?;
        let classifier = file.get_opt::<LinearModel>()?;
        if let Some(c) = &classifier {
            if c.dim() != pipeline.output_len() {
                return Err(PdlError::DimensionMismatch {
                    expected: pipeline.output_len(),
                    actual: c.dim(),
                }
                .into());
            }
        }
        *out = Box::into_raw(Box::new(PdlModel {
            pipeline,
            classifier,
        }));
        Ok(())
    })
}

/// Release a model; null is ignored.
///
/// # Safety
/// `model` must come from [`pdl_model_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pdl_model_free(model: *mut PdlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Length of the feature vector written by [`pdl_model_encode`].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pdl_model_feature_len(
    model: *const PdlModel,
    out: *mut usize,
) -> PdlStatus {
    guard(|| {
        *out_ref(out, "out")? = model_ref(model)?.pipeline.output_len();
        Ok(())
    })
}

/// Codes in the encoding dictionary, patch side and channel count.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pdl_model_shape(
    model: *const PdlModel,
    dictionary_size: *mut usize,
    patch_side: *mut usize,
    channels: *mut usize,
) -> PdlStatus {
    guard(|| {
        let d = &model_ref(model)?.pipeline.dictionary;
        *out_ref(dictionary_size, "dictionary_size")? = d.size();
        *out_ref(patch_side, "patch_side")? = d.patch_side;
        *out_ref(channels, "channels")? = d.channels;
        Ok(())
    })
}

/// Number of classes of the stored classifier, 0 if there is none.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pdl_model_num_classes(
    model: *const PdlModel,
    out: *mut usize,
) -> PdlStatus {
    guard(|| {
        *out_ref(out, "out")? = model_ref(model)?
            .classifier
            .as_ref()
            .map_or(0, |c| c.num_classes());
        Ok(())
    })
}

fn image(pixels: &[u8], width: usize, height: usize, channels: usize) -> Result<RawImage, Failure> {
    Ok(RawImage::new(width, height, channels, pixels.to_vec())?)
}

/// Encode, pool and map one channel-planar 8-bit image into `out`, which
/// must hold exactly [`pdl_model_feature_len`] values.
///
/// # Safety
/// `pixels` must hold `width * height * channels` bytes and `out` `out_len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn pdl_model_encode(
    model: *const PdlModel,
    pixels: *const u8,
    width: usize,
    height: usize,
    channels: usize,
    out: *mut f64,
    out_len: usize,
) -> PdlStatus {
    guard(|| {
        let m = model_ref(model)?;
        let px = input(pixels, width * height * channels, "pixels")?;
        let expected = m.pipeline.output_len();
        if out_len != expected {
            return Err(PdlError::DimensionMismatch {
                expected,
                actual: out_len,
            }
            .into());
        }
        let out = output(out, out_len, "out")?;
        let features = m
            .pipeline
            .featurize_image(&image(px, width, height, channels)?)?;
        out.copy_from_slice(&features);
        Ok(())
    })
}

/// Predicted class of one image using the model's classifier.
///
/// # Safety
/// As for [`pdl_model_encode`]; `class_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pdl_model_predict(
    model: *const PdlModel,
    pixels: *const u8,
    width: usize,
    height: usize,
    channels: usize,
    class_out: *mut usize,
) -> PdlStatus {
    guard(|| {
        let m = model_ref(model)?;
        let class_out = out_ref(class_out, "class_out")?;
        let clf = m
            .classifier
            .as_ref()
            .ok_or_else(|| Failure(PdlStatus::MissingSection, "model has no classifier".into()))?;
        let px = input(pixels, width * height * channels, "pixels")?;
        let features = m
            .pipeline
            .featurize_image(&image(px, width, height, channels)?)?;
        *class_out = clf.predict(&features)?;
        Ok(())
    })
}

/// Affinity propagation on an `n × n` similarity matrix whose diagonal holds
/// the preferences. Writes the exemplar count, the exemplar indices
/// (ascending, `exemplars` must hold `n` entries) and each point's exemplar.
///
/// # Safety
/// `similarity` must hold `n * n` doubles, `exemplars` and `assignment` `n`
/// entries each.
#[no_mangle]
pub unsafe extern "C" fn pdl_affinity_propagation(
    similarity: *const f64,
    n: usize,
    damping: f64,
    max_iters: usize,
    convergence_window: usize,
    num_exemplars: *mut usize,
    exemplars: *mut usize,
    assignment: *mut usize,
) -> PdlStatus {
    guard(|| {
        if n == 0 {
            return Err(invalid("n must be >= 1"));
        }
        let s = input(similarity, n * n, "similarity")?;
        let count = out_ref(num_exemplars, "num_exemplars")?;
        let ex = output(exemplars, n, "exemplars")?;
        let asg = output(assignment, n, "assignment")?;
        let sim = SimilarityMatrix::from_matrix(square(s, n))?;
        let params = ApParams {
            damping,
            max_iters,
            convergence_window,
        };
        let sel = affinity_propagation(&sim, &params)?;
        *count = sel.len();
        write_selection(&sel, ex, asg);
        Ok(())
    })
}

/// Choose exactly `k` exemplars from an `m × m` covariance matrix of pooled
/// responses, with default affinity propagation settings.
///
/// # Safety
/// `covariance` must hold `m * m` doubles, `exemplars` `k` entries and
/// `assignment` `m` entries.
#[no_mangle]
pub unsafe extern "C" fn pdl_select_k(
    covariance: *const f64,
    m: usize,
    k: usize,
    exemplars: *mut usize,
    assignment: *mut usize,
) -> PdlStatus {
    guard(|| {
        if m == 0 {
            return Err(invalid("m must be >= 1"));
        }
        let c = input(covariance, m * m, "covariance")?;
        let ex = output(exemplars, k, "exemplars")?;
        let asg = output(assignment, m, "assignment")?;
        let cov = CovarianceMatrix {
            c: square(c, m),
            sample_count: 0,
            means: vec![0.0; m],
        };
        let sel = select_k_exemplars(
            &cov,
            k,
            &ApParams::default(),
            pdl::selection::DEFAULT_SEARCH_BUDGET,
        )?;
        write_selection(&sel, ex, asg);
        Ok(())
    })
}

/// The pairwise similarity `2ρ - 2` of a covariance matrix with `preference`
/// on the diagonal, written to `out` (`m * m` doubles).
///
/// # Safety
/// Buffers must hold `m * m` doubles.
#[no_mangle]
pub unsafe extern "C" fn pdl_similarity(
    covariance: *const f64,
    m: usize,
    preference: f64,
    out: *mut f64,
) -> PdlStatus {
    guard(|| {
        if m == 0 {
            return Err(invalid("m must be >= 1"));
        }
        let c = input(covariance, m * m, "covariance")?;
        let out = output(out, m * m, "out")?;
        let cov = CovarianceMatrix {
            c: square(c, m),
            sample_count: 0,
            means: vec![0.0; m],
        };
        let sim = build_similarity(&cov, preference, default_variance_floor(&cov))?;
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] = sim.s[(i, j)];
            }
        }
        Ok(())
    })
}

/// Nyström reconstruction `W pinv(C_SS) Wᵀ` of the `m × m` PSD matrix `c`
/// from the `k` column indices in `subset`, written to `out`.
///
/// # Safety
/// `c` and `out` must hold `m * m` doubles and `subset` `k` indices.
#[no_mangle]
pub unsafe extern "C" fn pdl_nystrom_reconstruct(
    c: *const f64,
    m: usize,
    subset: *const usize,
    k: usize,
    out: *mut f64,
) -> PdlStatus {
    guard(|| {
        if m == 0 {
            return Err(invalid("m must be >= 1"));
        }
        let c = input(c, m * m, "c")?;
        let idx = input(subset, k, "subset")?;
        let out = output(out, m * m, "out")?;
        let r = pdl::nystrom::nystrom_reconstruct(&square(c, m), idx)?;
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] = r[(i, j)];
            }
        }
        Ok(())
    })
}
