//! C ABI for the `hrsa` similarity toolkit.
//!
//! Conventions:
//!
//! * Every function returns an [`HrsaStatus`]; results go through out-pointers.
//! * Matrices are dense `double` buffers in row-major order (`n` rows of `d`).
//! * On failure, [`hrsa_last_error`] returns a message for the calling thread.
//! * Activation sets are opaque handles released with [`hrsa_activation_set_free`].
//! * Panics never cross the boundary; they surface as `HRSA_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hrsa::geometry::{knn_overlap, linear_cka};
use hrsa::representation::{dimwise_correlation, inverse_row_entropy, procrustes_align};
use hrsa::store::{load_activation_set, ActivationSet};
use hrsa::sweep::{layer_grid, MetricSpec, SweepOptions};
use hrsa::Error;
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HrsaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    /// A metric precondition failed numerically (constant input, zero-norm
    /// row, SVD failure).
    Numerical = 4,
    Panic = 5,
}

/// Opaque handle to a loaded activation dump.
pub struct HrsaActivationSet {
    inner: ActivationSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(HrsaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = if e.is_io() {
            HrsaStatus::Io
        } else {
            match e {
                Error::ZeroNormRow { .. }
                | Error::ConstantRepresentation(_)
                | Error::AllColumnsUndefined(_)
                | Error::SvdNonConvergence => HrsaStatus::Numerical,
                _ => HrsaStatus::InvalidArgument,
            }
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(HrsaStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(HrsaStatus::InvalidArgument, msg.into())
}

fn guard<F>(f: F) -> HrsaStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HrsaStatus::Ok,
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
            set_error(format!("panic: {msg}"));
            HrsaStatus::Panic
        }
    }
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn matrix(
    data: *const f64,
    rows: usize,
    cols: usize,
    what: &str,
) -> Result<DMatrix<f64>, Failure> {
    if data.is_null() {
        return Err(null(what));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| invalid(format!("{what}: {rows} x {cols} overflows")))?;
    let slice = std::slice::from_raw_parts(data, len);
    Ok(DMatrix::from_row_slice(rows, cols, slice))
}

unsafe fn set_ref<'a>(
    set: *const HrsaActivationSet,
    what: &str,
) -> Result<&'a ActivationSet, Failure> {
    set.as_ref().map(|s| &s.inner).ok_or_else(|| null(what))
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

/// Message describing the most recent failure on this thread, or NULL.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hrsa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hrsa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a dump directory (`manifest.json` + `layer_{i}.npy`).
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hrsa_activation_set_load(
    dir: *const c_char,
    out: *mut *mut HrsaActivationSet,
) -> HrsaStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = load_activation_set(Path::new(dir))?;
        write(
            out,
            Box::into_raw(Box::new(HrsaActivationSet { inner })),
            "out",
        )
    })
}

/// Release a handle from [`hrsa_activation_set_load`]. NULL is a no-op.
///
/// # Safety
/// `set` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hrsa_activation_set_free(set: *mut HrsaActivationSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// # Safety
/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hrsa_activation_set_num_layers(
    set: *const HrsaActivationSet,
    out: *mut usize,
) -> HrsaStatus {
    guard(|| write(out, set_ref(set, "set")?.num_layers(), "out"))
}

/// # Safety
/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hrsa_activation_set_n_tokens(
    set: *const HrsaActivationSet,
    out: *mut usize,
) -> HrsaStatus {
    guard(|| write(out, set_ref(set, "set")?.n_tokens(), "out"))
}

/// Hidden width of one layer.
///
/// # Safety
/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hrsa_activation_set_layer_dim(
    set: *const HrsaActivationSet,
    layer: usize,
    out: *mut usize,
) -> HrsaStatus {
    guard(|| {
        let set = set_ref(set, "set")?;
        let m = set
            .layer(layer)
            .ok_or_else(|| invalid(format!("layer {layer} out of range")))?;
        write(out, m.dim(), "out")
    })
}

/// Copy one layer into `out` (row-major, `len` must equal `N * D`).
///
/// # Safety
/// `set` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hrsa_activation_set_copy_layer(
    set: *const HrsaActivationSet,
    layer: usize,
    out: *mut f64,
    len: usize,
) -> HrsaStatus {
    guard(|| {
        let set = set_ref(set, "set")?;
        let m = set
            .layer(layer)
            .ok_or_else(|| invalid(format!("layer {layer} out of range")))?
            .data();
        if out.is_null() {
            return Err(null("out"));
        }
        if len != m.len() {
            return Err(invalid(format!(
                "buffer holds {len} values, layer has {}",
                m.len()
            )));
        }
        let dst = std::slice::from_raw_parts_mut(out, len);
        for (i, row) in m.row_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                dst[i * m.ncols() + j] = *v;
            }
        }
        Ok(())
    })
}

/// Linear CKA of `x` (`n x dx`) and `y` (`n x dy`).
///
/// # Safety
/// Buffers must hold `n * dx` and `n * dy` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hrsa_linear_cka(
    x: *const f64,
    y: *const f64,
    n: usize,
    dx: usize,
    dy: usize,
    out: *mut f64,
) -> HrsaStatus {
    guard(|| {
        let r = linear_cka(&matrix(x, n, dx, "x")?, &matrix(y, n, dy, "y")?)?;
        write(out, r.value, "out")
    })
}

/// Mean Jaccard overlap of cosine k-NN sets.
///
/// # Safety
/// Buffers must hold `n * dx` and `n * dy` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hrsa_knn_overlap(
    x: *const f64,
    y: *const f64,
    n: usize,
    dx: usize,
    dy: usize,
    k: usize,
    out: *mut f64,
) -> HrsaStatus {
    guard(|| {
        let r = knn_overlap(&matrix(x, n, dx, "x")?, &matrix(y, n, dy, "y")?, k)?;
        write(out, r.mean_overlap, "out")
    })
}

/// Mean per-dimension Pearson correlation; undefined columns are skipped.
///
/// # Safety
/// Both buffers must hold `n * d` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hrsa_dimwise_mean(
    x: *const f64,
    y: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
) -> HrsaStatus {
    guard(|| {
        let r = dimwise_correlation(&matrix(x, n, d, "x")?, &matrix(y, n, d, "y")?)?;
        write(out, r.mean, "out")
    })
}

/// Orthogonal Procrustes alignment of `x` onto `y`.
///
/// `o_star` (optional, `d * d`, row-major) receives the alignment map;
/// `residual` and `h_inv` (optional) receive the fit error and the inverse
/// row entropy of the map.
///
/// # Safety
/// Both buffers must hold `n * d` doubles; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hrsa_procrustes(
    x: *const f64,
    y: *const f64,
    n: usize,
    d: usize,
    center: bool,
    o_star: *mut f64,
    residual: *mut f64,
    h_inv: *mut f64,
) -> HrsaStatus {
    guard(|| {
        let s = procrustes_align(&matrix(x, n, d, "x")?, &matrix(y, n, d, "y")?, center)?;
        if !o_star.is_null() {
            let dst = std::slice::from_raw_parts_mut(o_star, d * d);
            for (i, row) in s.o_star.iter().enumerate() {
                dst[i * d..(i + 1) * d].copy_from_slice(row);
            }
        }
        if !residual.is_null() {
            residual.write(s.residual);
        }
        if !h_inv.is_null() {
            h_inv.write(s.h_inv);
        }
        Ok(())
    })
}

/// Inverse normalized row entropy of a `d x d` orthogonal matrix.
///
/// # Safety
/// `o` must hold `d * d` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hrsa_inverse_row_entropy(
    o: *const f64,
    d: usize,
    out: *mut f64,
) -> HrsaStatus {
    guard(|| write(out, inverse_row_entropy(&matrix(o, d, d, "o")?)?, "out"))
}

/// Metric for every layer pair of `a` (rows) and `b` (columns).
///
/// `metric` is one of `dimwise`, `procrustes`, `cka`, `knn:{k}`. `out` holds
/// `rows * cols` doubles, row-major; cells whose preconditions fail are NaN.
/// `jobs` bounds worker threads (0 = available parallelism).
///
/// # Safety
/// Handles must be live, `metric` NUL-terminated, `out` writable for
/// `rows * cols` doubles.
#[no_mangle]
pub unsafe extern "C" fn hrsa_layer_grid(
    a: *const HrsaActivationSet,
    b: *const HrsaActivationSet,
    metric: *const c_char,
    jobs: usize,
    out: *mut f64,
    rows: usize,
    cols: usize,
) -> HrsaStatus {
    guard(|| {
        let (a, b) = (set_ref(a, "a")?, set_ref(b, "b")?);
        let metric: MetricSpec = str_arg(metric, "metric")?.parse()?;
        if metric == MetricSpec::Probe {
            return Err(invalid("probe grids are not available through the C API"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if (rows, cols) != (a.num_layers(), b.num_layers()) {
            return Err(invalid(format!(
                "grid is {} x {}, caller passed {rows} x {cols}",
                a.num_layers(),
                b.num_layers()
            )));
        }
        let opts = SweepOptions {
            jobs,
            ..SweepOptions::default()
        };
        let grid = layer_grid(a, b, metric, &opts)?;
        let dst = std::slice::from_raw_parts_mut(out, rows * cols);
        for (i, row) in grid.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                dst[i * cols + j] = v.unwrap_or(f64::NAN);
            }
        }
        Ok(())
    })
}
