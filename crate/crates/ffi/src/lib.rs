//! C ABI for the deepcluster pipeline.
//!
//! Feature matrices and cluster assignments are opaque handles created and
//! destroyed through this interface. Every fallible call returns a
//! [`DcStatus`]; on failure a message is available from
//! [`dc_last_error_message`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use deepcluster::cluster::{run, AlgoConfig, Algorithm, ClusterAssignment};
use deepcluster::metrics::score;
use deepcluster::{Error, ErrorKind, FeatureMatrix, Provenance};

/// Result codes. Values 2 to 5 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcStatus {
    Ok = 0,
    InvalidArgument = 1,
    Config = 2,
    Data = 3,
    Model = 4,
    Runtime = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcAlgorithm {
    KMeans = 0,
    MiniBatchKMeans = 1,
    AffinityPropagation = 2,
    MeanShift = 3,
    Agglomerative = 4,
    Dbscan = 5,
    Birch = 6,
}

impl From<DcAlgorithm> for Algorithm {
    fn from(a: DcAlgorithm) -> Self {
        match a {
            DcAlgorithm::KMeans => Algorithm::KMeans,
            DcAlgorithm::MiniBatchKMeans => Algorithm::MiniBatchKMeans,
            DcAlgorithm::AffinityPropagation => Algorithm::AffinityPropagation,
            DcAlgorithm::MeanShift => Algorithm::MeanShift,
            DcAlgorithm::Agglomerative => Algorithm::Agglomerative,
            DcAlgorithm::Dbscan => Algorithm::Dbscan,
            DcAlgorithm::Birch => Algorithm::Birch,
        }
    }
}

/// Row-major feature matrix with record ids.
pub struct DcFeatures(FeatureMatrix);

/// Labels of one clustering run; `-1` marks noise.
pub struct DcAssignment(ClusterAssignment);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: DcStatus, message: impl Into<String>) -> DcStatus {
    set_error(message.into());
    status
}

fn from_error(e: Error) -> DcStatus {
    let status = match e.kind() {
        ErrorKind::Config => DcStatus::Config,
        ErrorKind::Data => DcStatus::Data,
        ErrorKind::Model => DcStatus::Model,
        ErrorKind::Runtime => DcStatus::Runtime,
    };
    fail(status, e.to_string())
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), DcStatus>) -> DcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DcStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(DcStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn check<T>(r: deepcluster::Result<T>) -> Result<T, DcStatus> {
    r.map_err(from_error)
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, DcStatus> {
    if p.is_null() {
        return Err(fail(DcStatus::InvalidArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DcStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

fn null_arg(name: &str) -> DcStatus {
    fail(DcStatus::InvalidArgument, format!("{name} is null"))
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies an `n x d` row-major matrix. Rows get ids `"0"`, `"1"`, ...
///
/// # Safety
/// `data` must point to `n * d` readable floats and `out` to writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dc_features_new(
    data: *const f32,
    n: usize,
    d: usize,
    out: *mut *mut DcFeatures,
) -> DcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_arg("out"));
        }
        let len = n
            .checked_mul(d)
            .ok_or_else(|| fail(DcStatus::InvalidArgument, "n * d overflows"))?;
        if data.is_null() && len > 0 {
            return Err(null_arg("data"));
        }
        let values = if len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(data, len).to_vec()
        };
        let ids = (0..n).map(|i| i.to_string()).collect();
        let m = check(FeatureMatrix::new(values, d, ids, Provenance::synthetic("ffi")))?;
        *out = Box::into_raw(Box::new(DcFeatures(m)));
        Ok(())
    })
}

/// Loads a feature cache file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dc_features_load(path: *const c_char, out: *mut *mut DcFeatures) -> DcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_arg("out"));
        }
        let path = str_arg(path, "path")?;
        let m = check(FeatureMatrix::load(path, None))?;
        *out = Box::into_raw(Box::new(DcFeatures(m)));
        Ok(())
    })
}

/// Writes a feature cache file.
///
/// # Safety
/// `features` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dc_features_save(features: *const DcFeatures, path: *const c_char) -> DcStatus {
    guard(|| {
        let f = features.as_ref().ok_or_else(|| null_arg("features"))?;
        let path = str_arg(path, "path")?;
        check(f.0.save(path))
    })
}

/// Number of rows, or 0 for NULL.
///
/// # Safety
/// `features` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_features_rows(features: *const DcFeatures) -> usize {
    features.as_ref().map_or(0, |f| f.0.n())
}

/// Row width, or 0 for NULL.
///
/// # Safety
/// `features` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_features_dim(features: *const DcFeatures) -> usize {
    features.as_ref().map_or(0, |f| f.0.dim())
}

/// # Safety
/// `features` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dc_features_free(features: *mut DcFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

fn cluster_handle(f: &DcFeatures, config: &AlgoConfig, seed: u64) -> Result<*mut DcAssignment, DcStatus> {
    let a = check(run(&f.0, config, seed))?;
    Ok(Box::into_raw(Box::new(DcAssignment(a))))
}

/// Clusters with default parameters. Pass `k = 0` for algorithms that find
/// the number of clusters themselves (AP, MS, DBSCAN).
///
/// # Safety
/// `features` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dc_cluster(
    features: *const DcFeatures,
    algorithm: DcAlgorithm,
    k: usize,
    seed: u64,
    out: *mut *mut DcAssignment,
) -> DcStatus {
    guard(|| {
        let f = features.as_ref().ok_or_else(|| null_arg("features"))?;
        if out.is_null() {
            return Err(null_arg("out"));
        }
        let config = AlgoConfig::new(algorithm.into(), (k > 0).then_some(k));
        *out = cluster_handle(f, &config, seed)?;
        Ok(())
    })
}

/// Clusters with a JSON config such as
/// `{"algorithm": "DBS", "overrides": {"eps": 2.0}}`.
///
/// # Safety
/// `features` must be a live handle, `config_json` a NUL-terminated string
/// and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dc_cluster_json(
    features: *const DcFeatures,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut DcAssignment,
) -> DcStatus {
    guard(|| {
        let f = features.as_ref().ok_or_else(|| null_arg("features"))?;
        if out.is_null() {
            return Err(null_arg("out"));
        }
        let text = str_arg(config_json, "config_json")?;
        let config = check(AlgoConfig::from_json(text))?;
        *out = cluster_handle(f, &config, seed)?;
        Ok(())
    })
}

/// Number of labels, or 0 for NULL.
///
/// # Safety
/// `assignment` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_assignment_len(assignment: *const DcAssignment) -> usize {
    assignment.as_ref().map_or(0, |a| a.0.len())
}

/// Number of clusters found, noise excluded; 0 for NULL.
///
/// # Safety
/// `assignment` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_assignment_clusters(assignment: *const DcAssignment) -> usize {
    assignment.as_ref().map_or(0, |a| a.0.n_clusters_found)
}

/// Fit time in seconds; 0 for NULL.
///
/// # Safety
/// `assignment` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dc_assignment_seconds(assignment: *const DcAssignment) -> f64 {
    assignment.as_ref().map_or(0.0, |a| a.0.wall_seconds)
}

/// Copies the labels into `buf`, which must hold at least
/// [`dc_assignment_len`] entries.
///
/// # Safety
/// `assignment` must be a live handle and `buf` writable for `capacity`
/// ints.
#[no_mangle]
pub unsafe extern "C" fn dc_assignment_labels(
    assignment: *const DcAssignment,
    buf: *mut i32,
    capacity: usize,
) -> DcStatus {
    guard(|| {
        let a = assignment.as_ref().ok_or_else(|| null_arg("assignment"))?;
        let labels = &a.0.labels;
        if capacity < labels.len() {
            return Err(fail(
                DcStatus::InvalidArgument,
                format!("buffer holds {capacity} labels, need {}", labels.len()),
            ));
        }
        if !labels.is_empty() {
            if buf.is_null() {
                return Err(null_arg("buf"));
            }
            ptr::copy_nonoverlapping(labels.as_ptr(), buf, labels.len());
        }
        Ok(())
    })
}

/// # Safety
/// `assignment` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dc_assignment_free(assignment: *mut DcAssignment) {
    if !assignment.is_null() {
        drop(Box::from_raw(assignment));
    }
}

/// NMI (geometric normalization) and purity of `pred` against `truth`.
/// Negative predictions count as one noise cluster.
///
/// # Safety
/// `pred` and `truth` must point to `n` readable values; `nmi` and `purity`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn dc_score(
    pred: *const i32,
    truth: *const u32,
    n: usize,
    nmi: *mut f64,
    purity: *mut f64,
) -> DcStatus {
    guard(|| {
        if nmi.is_null() || purity.is_null() {
            return Err(null_arg("nmi/purity"));
        }
        if n > 0 && (pred.is_null() || truth.is_null()) {
            return Err(null_arg("pred/truth"));
        }
        let (p, t) = if n == 0 {
            (&[][..], Vec::new())
        } else {
            (
                std::slice::from_raw_parts(pred, n),
                std::slice::from_raw_parts(truth, n).iter().map(|&c| c as usize).collect(),
            )
        };
        let s = check(score(p, &t))?;
        *nmi = s.nmi;
        *purity = s.purity;
        Ok(())
    })
}
