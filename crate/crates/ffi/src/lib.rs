//! C ABI over the agreement and consistency primitives.
//!
//! Conventions: every fallible call returns an [`SkStatus`] and writes its
//! result through an out-pointer; `SK_STATUS_OK` means the out value is
//! valid. On any other status the out value is untouched and
//! [`sk_last_error_message`] returns a description. Handles returned through
//! `*mut` out-pointers own their data and must be released with the matching
//! `_free` function exactly once. Strings are NUL-terminated UTF-8.
//!
//! The last-error message is thread local: a call only overwrites the
//! message of errors raised on the same thread.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::fmt::Display;
use std::path::Path;
use std::ptr;

use scorekit::agreement::{
    cohen_kappa, fleiss_kappa_rows, interpret_kappa, quadratic_weighted_kappa, Band,
};
use scorekit::clustering::{consistency, Algorithm, Clustering, Stratum};
use scorekit::corpus::{Corpus, ItemId, Label};

/// Outcome of an FFI call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SkStatus {
    /// Success; out-parameters are populated.
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The underlying file could not be read or parsed.
    IoError = 3,
    /// An argument was out of range or inconsistent.
    InvalidArgument = 4,
    /// The statistic is undefined for this input (e.g. degenerate marginals).
    Degenerate = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: SkStatus, message: impl Display) -> SkStatus {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).expect("NUL bytes stripped");
    });
    status
}

/// Message describing the most recent failure on the calling thread, or an
/// empty string if none. The pointer stays valid until the next failing
/// scorekit call on this thread.
#[no_mangle]
pub extern "C" fn sk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// # Safety
/// `ptr` must be NUL-terminated and valid for reads.
unsafe fn read_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, SkStatus> {
    if ptr.is_null() {
        return Err(fail(SkStatus::NullPointer, format!("{name} is NULL")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(SkStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn write_out<T>(out: *mut T, value: T, name: &str) -> SkStatus {
    if out.is_null() {
        return fail(SkStatus::NullPointer, format!("{name} is NULL"));
    }
    unsafe { ptr::write(out, value) };
    SkStatus::Ok
}

/// A loaded response corpus, opaque to C.
pub struct SkCorpus(Corpus);

/// A square label-by-label contingency table, opaque to C.
pub struct SkConfusionMatrix(scorekit::agreement::ConfusionMatrix);

/// Load a corpus from a JSON-lines response file, and optionally attach
/// scores from a CSV file (`scores_path` may be NULL).
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sk_corpus_load(
    responses_path: *const c_char,
    scores_path: *const c_char,
    out: *mut *mut SkCorpus,
) -> SkStatus {
    let responses = match read_str(responses_path, "responses_path") {
        Ok(s) => s,
        Err(status) => return status,
    };
    let mut corpus = match Corpus::load_responses(Path::new(responses)) {
        Ok(c) => c,
        Err(e) => return fail(SkStatus::IoError, e),
    };
    if !scores_path.is_null() {
        let scores = match read_str(scores_path, "scores_path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        corpus = match corpus.load_scores(Path::new(scores)) {
            Ok(c) => c,
            Err(e) => return fail(SkStatus::IoError, e),
        };
    }
    write_out(out, Box::into_raw(Box::new(SkCorpus(corpus))), "out")
}

/// Release a corpus handle. NULL is ignored.
///
/// # Safety
/// `corpus` must come from `sk_corpus_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sk_corpus_free(corpus: *mut SkCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Number of responses in the corpus.
///
/// # Safety
/// `corpus` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sk_corpus_response_count(
    corpus: *const SkCorpus,
    out: *mut usize,
) -> SkStatus {
    match corpus.as_ref() {
        Some(c) => write_out(out, c.0.response_count(), "out"),
        None => fail(SkStatus::NullPointer, "corpus is NULL"),
    }
}

/// Number of score records in the corpus.
///
/// # Safety
/// `corpus` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sk_corpus_score_count(
    corpus: *const SkCorpus,
    out: *mut usize,
) -> SkStatus {
    match corpus.as_ref() {
        Some(c) => write_out(out, c.0.score_count(), "out"),
        None => fail(SkStatus::NullPointer, "corpus is NULL"),
    }
}

/// Build a k-by-k confusion matrix from two aligned label sequences.
/// Labels must lie in `0..k`.
///
/// # Safety
/// `labels_a` and `labels_b` must point to `n` readable bytes each; `out`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn sk_confusion_matrix_from_labels(
    labels_a: *const u8,
    labels_b: *const u8,
    n: usize,
    k: usize,
    out: *mut *mut SkConfusionMatrix,
) -> SkStatus {
    if labels_a.is_null() || labels_b.is_null() {
        return fail(SkStatus::NullPointer, "label array is NULL");
    }
    let a: Vec<usize> = std::slice::from_raw_parts(labels_a, n)
        .iter()
        .map(|&v| v as usize)
        .collect();
    let b: Vec<usize> = std::slice::from_raw_parts(labels_b, n)
        .iter()
        .map(|&v| v as usize)
        .collect();
    match scorekit::agreement::ConfusionMatrix::from_labels(&a, &b, k) {
        Ok(m) => write_out(out, Box::into_raw(Box::new(SkConfusionMatrix(m))), "out"),
        Err(e) => fail(SkStatus::InvalidArgument, e),
    }
}

/// Release a confusion-matrix handle. NULL is ignored.
///
/// # Safety
/// `matrix` must come from `sk_confusion_matrix_from_labels` and not be
/// freed twice.
#[no_mangle]
pub unsafe extern "C" fn sk_confusion_matrix_free(matrix: *mut SkConfusionMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

unsafe fn kappa_of(
    matrix: *const SkConfusionMatrix,
    out: *mut f64,
    compute: impl Fn(
        &scorekit::agreement::ConfusionMatrix,
    )
        -> Result<scorekit::agreement::KappaValue, scorekit::agreement::AgreementError>,
) -> SkStatus {
    let matrix = match matrix.as_ref() {
        Some(m) => m,
        None => return fail(SkStatus::NullPointer, "matrix is NULL"),
    };
    match compute(&matrix.0) {
        Ok(kappa) => write_out(out, kappa.value, "out"),
        Err(e) => fail(SkStatus::Degenerate, e),
    }
}

/// Cohen's kappa for the matrix.
///
/// # Safety
/// `matrix` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sk_cohen_kappa(
    matrix: *const SkConfusionMatrix,
    out: *mut f64,
) -> SkStatus {
    kappa_of(matrix, out, cohen_kappa)
}

/// Quadratic weighted kappa for the matrix.
///
/// # Safety
/// `matrix` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sk_quadratic_weighted_kappa(
    matrix: *const SkConfusionMatrix,
    out: *mut f64,
) -> SkStatus {
    kappa_of(matrix, out, quadratic_weighted_kappa)
}

/// Fleiss' kappa over a row-major `n_items x k` table of per-item label
/// counts. Every row must sum to the same number of raters (>= 2).
///
/// # Safety
/// `counts` must point to `n_items * k` readable u64 values; `out` must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn sk_fleiss_kappa(
    counts: *const u64,
    n_items: usize,
    k: usize,
    out: *mut f64,
) -> SkStatus {
    if counts.is_null() {
        return fail(SkStatus::NullPointer, "counts is NULL");
    }
    if k == 0 {
        return fail(SkStatus::InvalidArgument, "k must be positive");
    }
    let flat = std::slice::from_raw_parts(counts, n_items * k);
    let rows: Vec<Vec<u64>> = flat.chunks(k).map(|row| row.to_vec()).collect();
    match fleiss_kappa_rows(&rows) {
        Ok(kappa) => write_out(out, kappa.value, "out"),
        Err(e) => fail(SkStatus::Degenerate, e),
    }
}

/// Qualitative band for a kappa value, as a static string
/// ("worse-than-chance", "slight", "fair", "moderate", "substantial",
/// "almost-perfect").
#[no_mangle]
pub extern "C" fn sk_interpret_kappa(value: f64) -> *const c_char {
    let label: &'static [u8] = match interpret_kappa(value) {
        Band::WorseThanChance => b"worse-than-chance\0",
        Band::Slight => b"slight\0",
        Band::Fair => b"fair\0",
        Band::Moderate => b"moderate\0",
        Band::Substantial => b"substantial\0",
        Band::AlmostPerfect => b"almost-perfect\0",
    };
    label.as_ptr() as *const c_char
}

/// Rand consistency between two clusterings of the same `n` items, given as
/// aligned cluster-id arrays. 1.0 means every item pair is grouped the same
/// way in both.
///
/// # Safety
/// `clusters_a` and `clusters_b` must point to `n` readable u32 values;
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sk_rand_consistency(
    clusters_a: *const u32,
    clusters_b: *const u32,
    n: usize,
    out: *mut f64,
) -> SkStatus {
    if clusters_a.is_null() || clusters_b.is_null() {
        return fail(SkStatus::NullPointer, "cluster array is NULL");
    }
    let a = std::slice::from_raw_parts(clusters_a, n);
    let b = std::slice::from_raw_parts(clusters_b, n);
    let members: Vec<ItemId> = (0..n).map(|i| ItemId::new(format!("{i}"), "t")).collect();
    let stratum = Stratum::new("t", Label::new(0).expect("0 is in range"), members.clone());
    let as_clustering = |ids: &[u32]| {
        let assignment: BTreeMap<ItemId, usize> = members
            .iter()
            .cloned()
            .zip(ids.iter().map(|&c| c as usize))
            .collect();
        let k = ids.iter().map(|&c| c as usize + 1).max().unwrap_or(1);
        Clustering::from_assignment(stratum.clone(), Algorithm::KMeans, k, 0, assignment)
    };
    match consistency(&as_clustering(a), &as_clustering(b)) {
        Ok(score) => write_out(out, score.value, "out"),
        Err(e) => fail(SkStatus::InvalidArgument, e),
    }
}
