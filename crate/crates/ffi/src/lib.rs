//! C ABI over `ret_core`.
//!
//! Every fallible function returns a [`RetStatus`] and writes its result
//! through an out-pointer. On failure, [`ret_last_error`] returns a message
//! for the calling thread. Handles are opaque and must be released with the
//! matching `*_free` function; passing NULL to a free function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ret_core::dataset::{load_csv, Dataset, LabelColumn, MissingPolicy, Task};
use ret_core::error::{Error, ErrorClass};
use ret_core::eval::auc;
use ret_core::fsa::{fsa_on_leaves, BatchMode, FsaParams};
use ret_core::pool::{compile_design, generate_pool, PoolStrategy, TreePool};
use ret_core::tree::doc::{load_model, load_pool, save_model, save_pool};
use ret_core::tree::CompactEnsemble;
use ret_core::boost::BoostConfig;
use ret_core::loss::LossKind;

/// Status codes. Error classes share their numbers with the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetStatus {
    Ok = 0,
    /// NULL pointer, invalid UTF-8 or an out-of-range enum value.
    InvalidArgument = 1,
    Config = 2,
    Data = 3,
    Numerical = 4,
    /// A bug inside the library; the message says where.
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetTask {
    Regression = 0,
    BinaryClassification = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetPoolKind {
    Scsd = 0,
    Mcsd = 1,
    Mcmd = 2,
}

/// Selection settings; obtain defaults from [`ret_fsa_params_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetFsaParams {
    pub k: usize,
    pub n_iter: usize,
    pub mu: f64,
    pub eta: f64,
    pub rho: f64,
    pub seed: u64,
}

pub struct RetDataset(Dataset);
pub struct RetPool(TreePool);
pub struct RetModel(CompactEnsemble);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> RetStatus {
    match e.class() {
        ErrorClass::Config => RetStatus::Config,
        ErrorClass::Data => RetStatus::Data,
        ErrorClass::Numerical => RetStatus::Numerical,
    }
}

enum Failure {
    Arg(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RetStatus::Ok,
        Ok(Err(Failure::Arg(msg))) => {
            set_error(msg);
            RetStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal error: {msg}"));
            RetStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Arg(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Arg("string argument is not valid UTF-8"))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Arg(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Arg(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Arg("out pointer is NULL"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn task_of(task: RetTask) -> Task {
    match task {
        RetTask::Regression => Task::Regression,
        RetTask::BinaryClassification => Task::BinaryClassification,
    }
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ret_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn ret_fsa_params_default() -> RetFsaParams {
    let p = FsaParams::default();
    RetFsaParams {
        k: p.k,
        n_iter: p.n_iter,
        mu: p.mu,
        eta: p.eta,
        rho: p.rho,
        seed: p.seed,
    }
}

/// Loads a CSV with a header row. `label` is a column name or a decimal
/// column index. Rows with missing cells are dropped.
///
/// # Safety
/// `path` and `label` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ret_dataset_from_csv(
    path: *const c_char,
    label: *const c_char,
    task: RetTask,
    out: *mut *mut RetDataset,
) -> RetStatus {
    guard(|| {
        let path = str_arg(path, "path is NULL")?;
        let label: LabelColumn = str_arg(label, "label is NULL")?.parse().expect("infallible");
        let (ds, _) = load_csv(PathBuf::from(path), &label, task_of(task), MissingPolicy::DropRows)?;
        out_arg(out, RetDataset(ds))
    })
}

/// Builds a dataset from a row-major `n_rows x n_features` matrix and
/// `n_rows` labels (±1 for classification). The inputs are copied.
///
/// # Safety
/// `x` must hold `n_rows * n_features` doubles and `y` `n_rows` doubles.
#[no_mangle]
pub unsafe extern "C" fn ret_dataset_from_arrays(
    x: *const f64,
    n_rows: usize,
    n_features: usize,
    y: *const f64,
    task: RetTask,
    out: *mut *mut RetDataset,
) -> RetStatus {
    guard(|| {
        let len = n_rows.checked_mul(n_features).ok_or(Failure::Arg("matrix size overflows"))?;
        let x = slice_arg(x, len, "x is NULL")?.to_vec();
        let y = slice_arg(y, n_rows, "y is NULL")?.to_vec();
        let ds = Dataset::new(x, n_features, y, task_of(task), None)?;
        out_arg(out, RetDataset(ds))
    })
}

/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn ret_dataset_n_rows(ds: *const RetDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n_rows())
}

/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn ret_dataset_n_features(ds: *const RetDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n_features())
}

/// # Safety
/// `ds` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ret_dataset_free(ds: *mut RetDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Grows a pool of `trees` trees. `chains` is ignored for SCSD; `depths`
/// holds one depth for SCSD/MCSD and the depth set for MCMD. The loss is
/// logistic for classification data and square for regression data.
///
/// # Safety
/// `ds` must be a live dataset; `depths` must hold `n_depths` values.
#[no_mangle]
pub unsafe extern "C" fn ret_pool_generate(
    ds: *const RetDataset,
    kind: RetPoolKind,
    trees: usize,
    chains: usize,
    depths: *const usize,
    n_depths: usize,
    learning_rate: f64,
    seed: u64,
    out: *mut *mut RetPool,
) -> RetStatus {
    guard(|| {
        let ds = &ref_arg(ds, "dataset is NULL")?.0;
        let depths = slice_arg(depths, n_depths, "depths is NULL")?;
        let single = |d: &[usize]| -> Result<usize, Failure> {
            match d {
                [x] => Ok(*x),
                _ => Err(Failure::Arg("single-depth pools take exactly one depth")),
            }
        };
        let strategy = match kind {
            RetPoolKind::Scsd => PoolStrategy::Scsd { trees, depth: single(depths)? },
            RetPoolKind::Mcsd => PoolStrategy::Mcsd { trees, chains, depth: single(depths)? },
            RetPoolKind::Mcmd => PoolStrategy::Mcmd { trees, chains, depths: depths.to_vec() },
        };
        let loss = match ds.task() {
            Task::BinaryClassification => LossKind::Logistic,
            Task::Regression => LossKind::Square,
        };
        let boost = BoostConfig { loss, learning_rate, ..BoostConfig::default() };
        boost.validate()?;
        let pool = generate_pool(ds, &strategy, &boost, seed)?;
        out_arg(out, RetPool(pool))
    })
}

/// # Safety
/// `pool` must be NULL or a live pool handle.
#[no_mangle]
pub unsafe extern "C" fn ret_pool_len(pool: *const RetPool) -> usize {
    pool.as_ref().map_or(0, |p| p.0.len())
}

/// # Safety
/// `pool` must be live and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ret_pool_save(pool: *const RetPool, path: *const c_char) -> RetStatus {
    guard(|| {
        let pool = ref_arg(pool, "pool is NULL")?;
        Ok(save_pool(&pool.0, str_arg(path, "path is NULL")?)?)
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ret_pool_load(path: *const c_char, out: *mut *mut RetPool) -> RetStatus {
    guard(|| {
        let pool = load_pool(str_arg(path, "path is NULL")?)?;
        out_arg(out, RetPool(pool))
    })
}

/// # Safety
/// `pool` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ret_pool_free(pool: *mut RetPool) {
    if !pool.is_null() {
        drop(Box::from_raw(pool));
    }
}

/// Selects at most `params->k` trees from `pool` and refits their leaf
/// weights on `ds`, using the loss the pool was grown with.
///
/// # Safety
/// `pool`, `ds` and `params` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ret_select(
    pool: *const RetPool,
    ds: *const RetDataset,
    params: *const RetFsaParams,
    out: *mut *mut RetModel,
) -> RetStatus {
    guard(|| {
        let pool = &ref_arg(pool, "pool is NULL")?.0;
        let ds = &ref_arg(ds, "dataset is NULL")?.0;
        let p = ref_arg(params, "params is NULL")?;
        let params = FsaParams {
            k: p.k,
            n_iter: p.n_iter,
            mu: p.mu,
            eta: p.eta,
            rho: p.rho,
            batch: BatchMode::Full,
            seed: p.seed,
            refine_iter: None,
            record_trace: false,
        };
        params.validate(pool.len())?;
        pool.check_dimension(ds.n_features())?;
        let design = compile_design(pool, ds)?;
        let sel = fsa_on_leaves(pool, &design, ds, pool.boost.loss, &params)?;
        out_arg(out, RetModel(sel.ensemble))
    })
}

/// # Safety
/// `model` must be NULL or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn ret_model_n_trees(model: *const RetModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.k())
}

/// # Safety
/// `model` must be NULL or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn ret_model_intercept(model: *const RetModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.0.intercept())
}

/// Scores a row-major `n_rows x n_features` matrix into `scores`.
///
/// # Safety
/// `x` must hold `n_rows * n_features` doubles; `scores` must have room
/// for `n_rows` doubles.
#[no_mangle]
pub unsafe extern "C" fn ret_model_predict(
    model: *const RetModel,
    x: *const f64,
    n_rows: usize,
    n_features: usize,
    scores: *mut f64,
) -> RetStatus {
    guard(|| {
        let model = &ref_arg(model, "model is NULL")?.0;
        let len = n_rows.checked_mul(n_features).ok_or(Failure::Arg("matrix size overflows"))?;
        let x = slice_arg(x, len, "x is NULL")?;
        if n_rows > 0 && scores.is_null() {
            return Err(Failure::Arg("scores is NULL"));
        }
        let out = model.predict_rows(x, n_features)?;
        if n_rows > 0 {
            ptr::copy_nonoverlapping(out.as_ptr(), scores, n_rows);
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be live and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ret_model_save(model: *const RetModel, path: *const c_char) -> RetStatus {
    guard(|| {
        let model = ref_arg(model, "model is NULL")?;
        Ok(save_model(&model.0, str_arg(path, "path is NULL")?)?)
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ret_model_load(path: *const c_char, out: *mut *mut RetModel) -> RetStatus {
    guard(|| {
        let model = load_model(str_arg(path, "path is NULL")?)?;
        out_arg(out, RetModel(model))
    })
}

/// # Safety
/// `model` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn ret_model_free(model: *mut RetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Mann-Whitney AUC of `scores` against ±1 `labels`.
///
/// # Safety
/// `scores` and `labels` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ret_auc(scores: *const f64, labels: *const f64, n: usize, out: *mut f64) -> RetStatus {
    guard(|| {
        let s = slice_arg(scores, n, "scores is NULL")?;
        let y = slice_arg(labels, n, "labels is NULL")?;
        if out.is_null() {
            return Err(Failure::Arg("out pointer is NULL"));
        }
        *out = auc(s, y)?;
        Ok(())
    })
}
