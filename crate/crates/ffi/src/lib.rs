//! C ABI over `locimp`.
//!
//! Every function returns a [`LocimpStatus`]; on failure a message for the
//! calling thread is available from [`locimp_last_error`]. Objects live behind
//! opaque handles that the caller releases with the matching `*_free`.
//! Matrices are dense row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use locimp::data::{DataTable, Synthetic};
use locimp::forest::{local_importance, train_forest, Forest, ForestParams, ImportanceMatrix};
use locimp::varimp::{explain_instance, LocalFitParams};
use locimp::{Error, Predictor};
use ndarray::{Array1, Array2};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocimpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    IndexOutOfRange = 4,
    Io = 5,
    Parse = 6,
    Numeric = 7,
    Internal = 8,
}

/// A data table: features plus one target column.
pub struct LocimpTable {
    inner: DataTable,
}

/// A trained random forest.
pub struct LocimpForest {
    inner: Forest,
}

/// Per-instance normalized feature importances.
pub struct LocimpImportance {
    inner: ImportanceMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> LocimpStatus {
    match e {
        Error::DimensionMismatch { .. } | Error::SchemaMismatch(_) => LocimpStatus::DimensionMismatch,
        Error::IndexOutOfRange { .. } => LocimpStatus::IndexOutOfRange,
        Error::Io { .. } => LocimpStatus::Io,
        Error::Csv(_) | Error::Json(_) | Error::ParseCell { .. } | Error::MissingColumn(_) | Error::ModelVersion { .. } => {
            LocimpStatus::Parse
        }
        Error::Predictor(_) => LocimpStatus::Numeric,
        Error::Instance { source, .. } | Error::Stage { source, .. } => status_of(source),
        _ => LocimpStatus::InvalidArgument,
    }
}

struct Failure(LocimpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LocimpStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LocimpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            LocimpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            LocimpStatus::Internal
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn reference<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(LocimpStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn check_len(expected: usize, actual: usize, what: &str) -> Result<(), Failure> {
    if expected == actual {
        Ok(())
    } else {
        Err(Failure(
            LocimpStatus::DimensionMismatch,
            format!("{what}: buffer holds {actual} values, {expected} needed"),
        ))
    }
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn locimp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn locimp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a table from `n * d` row-major features and `n` targets.
///
/// # Safety
/// `features` must point to `n * d` doubles, `target` to `n` doubles and
/// `out` to writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn locimp_table_new(
    features: *const f64,
    n: usize,
    d: usize,
    target: *const f64,
    out: *mut *mut LocimpTable,
) -> LocimpStatus {
    guard(|| {
        let x = slice(features, n * d, "features")?.to_vec();
        let y = slice(target, n, "target")?.to_vec();
        let x = Array2::from_shape_vec((n, d), x).map_err(|e| Failure(LocimpStatus::DimensionMismatch, e.to_string()))?;
        let names = (1..=d).map(|j| format!("x{j}")).collect();
        let table = DataTable::new(x, Array1::from(y), names)?;
        store(out, LocimpTable { inner: table })
    })
}

/// Generates `n` rows of synthetic dataset `id` (1 to 6) with `d` features.
///
/// # Safety
/// `out` must point to writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn locimp_generate_synthetic(id: u32, n: usize, d: usize, seed: u64, out: *mut *mut LocimpTable) -> LocimpStatus {
    guard(|| {
        let (table, _) = Synthetic::from_id(id)?.generate(n, d, seed)?;
        store(out, LocimpTable { inner: table })
    })
}

/// Writes the true local coefficients of synthetic dataset `id` at every row
/// of `table` into `out` (`n * d` values).
///
/// # Safety
/// `table` must be a live handle and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn locimp_true_coefficients(id: u32, table: *const LocimpTable, out: *mut f64, len: usize) -> LocimpStatus {
    guard(|| {
        let t = &reference(table, "table")?.inner;
        check_len(t.n() * t.d(), len, "coefficients")?;
        let truth = Synthetic::from_id(id)?.ground_truth(t.features());
        let dst = slice_mut(out, len, "out")?;
        dst.iter_mut().zip(truth.true_coefficients.iter()).for_each(|(a, &b)| *a = b);
        Ok(())
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn locimp_table_n(table: *const LocimpTable) -> usize {
    table.as_ref().map_or(0, |t| t.inner.n())
}

/// Number of feature columns, or 0 for a null handle.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn locimp_table_d(table: *const LocimpTable) -> usize {
    table.as_ref().map_or(0, |t| t.inner.d())
}

/// Copies the row-major features (`n * d` values).
///
/// # Safety
/// `table` must be a live handle and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn locimp_table_features(table: *const LocimpTable, out: *mut f64, len: usize) -> LocimpStatus {
    guard(|| {
        let t = &reference(table, "table")?.inner;
        check_len(t.n() * t.d(), len, "features")?;
        let dst = slice_mut(out, len, "out")?;
        dst.iter_mut().zip(t.features().iter()).for_each(|(a, &b)| *a = b);
        Ok(())
    })
}

/// Copies the target column (`n` values).
///
/// # Safety
/// `table` must be a live handle and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn locimp_table_target(table: *const LocimpTable, out: *mut f64, len: usize) -> LocimpStatus {
    guard(|| {
        let t = &reference(table, "table")?.inner;
        check_len(t.n(), len, "target")?;
        slice_mut(out, len, "out")?.copy_from_slice(t.target().as_slice().expect("contiguous target"));
        Ok(())
    })
}

/// Returns a copy of `table` whose target column is replaced by `target`.
///
/// # Safety
/// `table` must be a live handle, `target` must point to `n` doubles and
/// `out` to writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn locimp_table_with_target(
    table: *const LocimpTable,
    target: *const f64,
    n: usize,
    out: *mut *mut LocimpTable,
) -> LocimpStatus {
    guard(|| {
        let t = &reference(table, "table")?.inner;
        let y = slice(target, n, "target")?.to_vec();
        let inner = t.with_target(Array1::from(y))?;
        store(out, LocimpTable { inner })
    })
}

/// Releases a table. Null is ignored.
///
/// # Safety
/// `table` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn locimp_table_free(table: *mut LocimpTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Trains a regression forest on `table`. `mtry = 0` selects `max(d / 3, 1)`.
///
/// # Safety
/// `table` must be a live handle and `out` must point to writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn locimp_forest_train(
    table: *const LocimpTable,
    n_trees: usize,
    mtry: usize,
    node_size: usize,
    seed: u64,
    out: *mut *mut LocimpForest,
) -> LocimpStatus {
    guard(|| {
        let t = &reference(table, "table")?.inner;
        let params = ForestParams {
            n_trees,
            mtry: (mtry > 0).then_some(mtry),
            node_size,
        };
        let inner = train_forest(t, &params, seed)?;
        store(out, LocimpForest { inner })
    })
}

/// Predicts `n` row-major rows of width `d` into `out` (`n` values).
///
/// # Safety
/// `forest` must be a live handle, `rows` must point to `n * d` doubles and
/// `out` to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn locimp_forest_predict(
    forest: *const LocimpForest,
    rows: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
) -> LocimpStatus {
    guard(|| {
        let f = &reference(forest, "forest")?.inner;
        check_len(f.n_features(), d, "row width")?;
        let x = Array2::from_shape_vec((n, d), slice(rows, n * d, "rows")?.to_vec())
            .map_err(|e| Failure(LocimpStatus::DimensionMismatch, e.to_string()))?;
        let pred = f.predict_rows(&x)?;
        slice_mut(out, n, "out")?.copy_from_slice(pred.as_slice().expect("contiguous predictions"));
        Ok(())
    })
}

/// Writes the forest as JSON.
///
/// # Safety
/// `forest` must be a live handle and `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn locimp_forest_save(forest: *const LocimpForest, path: *const c_char) -> LocimpStatus {
    guard(|| {
        let f = &reference(forest, "forest")?.inner;
        let path = path_arg(path)?;
        let file = std::fs::File::create(&path).map_err(|e| Failure(LocimpStatus::Io, format!("{}: {e}", path.display())))?;
        f.save_json(std::io::BufWriter::new(file))?;
        Ok(())
    })
}

/// Reads a forest written by [`locimp_forest_save`].
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn locimp_forest_load(path: *const c_char, out: *mut *mut LocimpForest) -> LocimpStatus {
    guard(|| {
        let path = path_arg(path)?;
        let file = std::fs::File::open(&path).map_err(|e| Failure(LocimpStatus::Io, format!("{}: {e}", path.display())))?;
        let inner = Forest::load_json(std::io::BufReader::new(file))?;
        store(out, LocimpForest { inner })
    })
}

/// Releases a forest. Null is ignored.
///
/// # Safety
/// `forest` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn locimp_forest_free(forest: *mut LocimpForest) {
    if !forest.is_null() {
        drop(Box::from_raw(forest));
    }
}

/// Out-of-bag local importance of every feature for every row of `table`,
/// which must be the table `forest` was trained on.
///
/// # Safety
/// `forest` and `table` must be live handles and `out` writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn locimp_importance_compute(
    forest: *const LocimpForest,
    table: *const LocimpTable,
    seed: u64,
    out: *mut *mut LocimpImportance,
) -> LocimpStatus {
    guard(|| {
        let f = &reference(forest, "forest")?.inner;
        let t = &reference(table, "table")?.inner;
        let inner = local_importance(f, t, seed)?;
        store(out, LocimpImportance { inner })
    })
}

/// Copies the normalized importances (`n * d` values, rows sum to one).
///
/// # Safety
/// `importance` must be a live handle and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn locimp_importance_weights(importance: *const LocimpImportance, out: *mut f64, len: usize) -> LocimpStatus {
    guard(|| {
        let m = &reference(importance, "importance")?.inner.normalized;
        check_len(m.len(), len, "importance")?;
        let dst = slice_mut(out, len, "out")?;
        dst.iter_mut().zip(m.iter()).for_each(|(a, &b)| *a = b);
        Ok(())
    })
}

/// Releases an importance matrix. Null is ignored.
///
/// # Safety
/// `importance` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn locimp_importance_free(importance: *mut LocimpImportance) {
    if !importance.is_null() {
        drop(Box::from_raw(importance));
    }
}

/// Importance-weighted local explanation of row `index` of `table`, whose
/// target column holds the black-box predictions. Writes the intercept, the
/// `d` coefficients and the `d` effects; `max_features = 0` allows all features.
///
/// # Safety
/// Handles must be live; `intercept` must point to one double, and
/// `coefficients` and `effects` to `d` doubles each (either may be null).
#[no_mangle]
pub unsafe extern "C" fn locimp_varimp_explain(
    table: *const LocimpTable,
    importance: *const LocimpImportance,
    index: usize,
    bandwidth: f64,
    max_features: usize,
    intercept: *mut f64,
    coefficients: *mut f64,
    effects: *mut f64,
    d: usize,
) -> LocimpStatus {
    guard(|| {
        let t = &reference(table, "table")?.inner;
        let imp = &reference(importance, "importance")?.inner;
        check_len(t.d(), d, "coefficients")?;
        if intercept.is_null() {
            return Err(null("intercept"));
        }
        let m = if max_features == 0 { t.d() } else { max_features };
        let params = LocalFitParams::new(m).with_bandwidth(bandwidth);
        let e = explain_instance(t, imp, index, &params)?;
        *intercept = e.intercept;
        if !coefficients.is_null() {
            slice_mut(coefficients, d, "coefficients")?.copy_from_slice(e.coefficients.as_slice().expect("contiguous"));
        }
        if !effects.is_null() {
            slice_mut(effects, d, "effects")?.copy_from_slice(e.effects.as_slice().expect("contiguous"));
        }
        Ok(())
    })
}
