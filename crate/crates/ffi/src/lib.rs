//! C ABI over the `ccgan` library.
//!
//! Every fallible function returns a [`CcganStatus`]; on failure a message is
//! available from [`ccgan_last_error_message`] on the same thread. Datasets
//! and generators are opaque handles released with their `_free` function.
//! Results are written through caller-provided out pointers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ccgan::conditioning::Generator;
use ccgan::data::{load_csv, LabeledDataset};
use ccgan::eval::{frechet_distance, GaussianMoments};
use ccgan::netcore::Checkpoint;
use ccgan::vicinal::{kappa_and_nu, normalize_labels, rule_of_thumb_sigma};
use ccgan::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcganStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    NonFinite = 4,
    Io = 5,
    Parse = 6,
    BufferTooSmall = 7,
    Panic = 8,
    Other = 9,
}

/// Loaded dataset.
pub struct CcganDataset {
    inner: LabeledDataset,
}

/// Loaded generator together with the raw label range of its training data.
pub struct CcganGenerator {
    inner: Generator,
    raw_min: f64,
    raw_max: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CcganStatus {
    match e {
        Error::InvalidArgument(_)
        | Error::DegenerateRange { .. }
        | Error::TooFew { .. }
        | Error::Config(_)
        | Error::NoSupport { .. }
        | Error::NoWindows { .. } => CcganStatus::InvalidArgument,
        Error::Shape(_) => CcganStatus::Shape,
        Error::NonFinite(_) | Error::WeightUnderflow { .. } | Error::Diverged { .. } => {
            CcganStatus::NonFinite
        }
        Error::Io { .. } => CcganStatus::Io,
        Error::Parse { .. } => CcganStatus::Parse,
        _ => CcganStatus::Other,
    }
}

struct Fail(CcganStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CcganStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording its error message and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CcganStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CcganStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CcganStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller guarantees `p` points to `n` readable doubles.
    Ok(unsafe { std::slice::from_raw_parts(p, n) })
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    // SAFETY: caller guarantees a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail(CcganStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn write<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    // SAFETY: checked non-null; caller guarantees it is writable.
    unsafe { out.write(v) };
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn ccgan_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Rule-of-thumb Gaussian noise scale for `n` raw labels on `[raw_min, raw_max]`.
///
/// # Safety
/// `labels` must point to `n` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ccgan_rule_of_thumb_sigma(
    labels: *const f64,
    n: usize,
    raw_min: f64,
    raw_max: f64,
    out: *mut f64,
) -> CcganStatus {
    guard(|| unsafe {
        let set = normalize_labels(slice(labels, n, "labels")?, raw_min, raw_max)?;
        write(out, rule_of_thumb_sigma(&set)?, "out")
    })
}

/// Vicinity width `kappa` and soft-weight decay `nu` for raw labels.
///
/// # Safety
/// `labels` must point to `n` doubles; `out_kappa` and `out_nu` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ccgan_kappa_and_nu(
    labels: *const f64,
    n: usize,
    raw_min: f64,
    raw_max: f64,
    m_kappa: f64,
    out_kappa: *mut f64,
    out_nu: *mut f64,
) -> CcganStatus {
    guard(|| unsafe {
        let set = normalize_labels(slice(labels, n, "labels")?, raw_min, raw_max)?;
        let (kappa, nu) = kappa_and_nu(&set, m_kappa)?;
        write(out_kappa, kappa, "out_kappa")?;
        write(out_nu, nu, "out_nu")
    })
}

/// Squared Fréchet distance between two Gaussians of dimension `dim`;
/// covariances are row-major `dim * dim` arrays.
///
/// # Safety
/// Means must point to `dim` doubles, covariances to `dim * dim`, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ccgan_frechet_distance(
    dim: usize,
    mean_a: *const f64,
    cov_a: *const f64,
    mean_b: *const f64,
    cov_b: *const f64,
    out: *mut f64,
) -> CcganStatus {
    guard(|| unsafe {
        if dim == 0 {
            return Err(Fail(
                CcganStatus::InvalidArgument,
                "dim must be >= 1".into(),
            ));
        }
        let square = dim
            .checked_mul(dim)
            .ok_or_else(|| Fail(CcganStatus::InvalidArgument, "dim too large".into()))?;
        let moments = |m: *const f64, c: *const f64| -> Result<GaussianMoments, Fail> {
            let mean = slice(m, dim, "mean")?.to_vec();
            let cov = slice(c, square, "covariance")?
                .chunks(dim)
                .map(<[f64]>::to_vec)
                .collect();
            Ok(GaussianMoments::new(mean, cov)?)
        };
        let a = moments(mean_a, cov_a)?;
        let b = moments(mean_b, cov_b)?;
        write(out, frechet_distance(&a, &b)?, "out")
    })
}

/// Loads a `y,x1,...,xd` CSV and its sidecar manifest.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ccgan_dataset_load(
    path: *const c_char,
    out: *mut *mut CcganDataset,
) -> CcganStatus {
    guard(|| unsafe {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = load_csv(&path_arg(path)?)?;
        write(out, Box::into_raw(Box::new(CcganDataset { inner })), "out")
    })
}

/// Number of samples; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ccgan_dataset_len(ds: *const CcganDataset) -> usize {
    // SAFETY: caller guarantees a live handle or null.
    unsafe { ds.as_ref() }.map_or(0, |d| d.inner.len())
}

/// Sample dimension; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ccgan_dataset_dim(ds: *const CcganDataset) -> usize {
    // SAFETY: caller guarantees a live handle or null.
    unsafe { ds.as_ref() }.map_or(0, |d| d.inner.dim())
}

/// Copies the raw labels into `out` (capacity `cap`).
///
/// # Safety
/// `ds` must be a live handle and `out` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn ccgan_dataset_raw_labels(
    ds: *const CcganDataset,
    out: *mut f64,
    cap: usize,
) -> CcganStatus {
    guard(|| unsafe {
        let d = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let labels = d.inner.labels().raw_labels();
        if cap < labels.len() {
            return Err(Fail(
                CcganStatus::BufferTooSmall,
                format!("need {} doubles, got {cap}", labels.len()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(labels.as_ptr(), out, labels.len());
        Ok(())
    })
}

/// Releases a dataset handle; null is ignored.
///
/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ccgan_dataset_free(ds: *mut CcganDataset) {
    if !ds.is_null() {
        // SAFETY: handle came from Box::into_raw in ccgan_dataset_load.
        drop(unsafe { Box::from_raw(ds) });
    }
}

/// Loads a generator checkpoint written by training.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ccgan_generator_load(
    path: *const c_char,
    out: *mut *mut CcganGenerator,
) -> CcganStatus {
    guard(|| unsafe {
        if out.is_null() {
            return Err(null("out"));
        }
        let ck = Checkpoint::read(&path_arg(path)?)?;
        let range = |k: &str| -> Result<f64, Fail> {
            ck.meta(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Fail(CcganStatus::Parse, format!("checkpoint lacks {k}")))
        };
        let g = CcganGenerator {
            inner: Generator::from_checkpoint(&ck)?,
            raw_min: range("raw_min")?,
            raw_max: range("raw_max")?,
        };
        write(out, Box::into_raw(Box::new(g)), "out")
    })
}

/// Output dimension; 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ccgan_generator_data_dim(g: *const CcganGenerator) -> usize {
    // SAFETY: caller guarantees a live handle or null.
    unsafe { g.as_ref() }.map_or(0, |g| g.inner.data_dim())
}

/// Generates `n_per_label` samples for each of `n_labels` raw labels, row-major
/// into `out`, which must hold `n_labels * n_per_label * data_dim` doubles.
/// Identical seeds give identical output.
///
/// # Safety
/// `g` must be a live handle, `labels` must hold `n_labels` doubles and `out`
/// `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn ccgan_generator_generate(
    g: *const CcganGenerator,
    labels: *const f64,
    n_labels: usize,
    n_per_label: usize,
    seed: u64,
    out: *mut f64,
    cap: usize,
) -> CcganStatus {
    guard(|| unsafe {
        let g = g.as_ref().ok_or_else(|| null("generator"))?;
        let raw = slice(labels, n_labels, "labels")?;
        let span = g.raw_max - g.raw_min;
        let all: Vec<f64> = raw
            .iter()
            .flat_map(|&y| std::iter::repeat_n((y - g.raw_min) / span, n_per_label))
            .collect();
        let need = all.len() * g.inner.data_dim();
        if cap < need {
            return Err(Fail(
                CcganStatus::BufferTooSmall,
                format!("need {need} doubles, got {cap}"),
            ));
        }
        if all.is_empty() {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let x = g
            .inner
            .generate(&all, &mut ChaCha8Rng::seed_from_u64(seed))?;
        ptr::copy_nonoverlapping(x.data().as_ptr(), out, need);
        Ok(())
    })
}

/// Releases a generator handle; null is ignored.
///
/// # Safety
/// `g` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ccgan_generator_free(g: *mut CcganGenerator) {
    if !g.is_null() {
        // SAFETY: handle came from Box::into_raw in ccgan_generator_load.
        drop(unsafe { Box::from_raw(g) });
    }
}
