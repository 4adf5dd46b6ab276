//! C ABI over the core crate: load datasets through manifests, fit any of
//! the benchmark methods, archive and reload models, and score new rows.
//!
//! Conventions:
//! - Handles (`BipDataset`, `BipModel`) are opaque; free them with the
//!   matching `*_free` call exactly once.
//! - Every fallible call returns a status code: 0 success, 1 bad input
//!   (paths, JSON, dimensions), 2 internal failure. On non-zero,
//!   `bip_last_error` returns a message valid until the next call on the
//!   same thread.
//! - All strings are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use bipmixed::baselines::{fit_method, Method, ModelArchive};
use bipmixed::config::RunConfig;
use bipmixed::data::MultiViewDataset;
use bipmixed::error::Error;
use bipmixed::io;
use bipmixed::simulate::{gen_dataset, scenario};

/// Success.
pub const BIP_OK: i32 = 0;
/// Bad input: paths, configuration, or data.
pub const BIP_ERR_INPUT: i32 = 1;
/// Internal failure (numerical breakdown, panic).
pub const BIP_ERR_INTERNAL: i32 = 2;

/// Opaque multi-view dataset handle.
pub struct BipDataset(MultiViewDataset);

/// Opaque fitted-model handle (any method).
pub struct BipModel(ModelArchive);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized: String = message.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn error_code(e: &Error) -> i32 {
    set_error(&e.to_string());
    if e.user_facing() {
        BIP_ERR_INPUT
    } else {
        BIP_ERR_INTERNAL
    }
}

/// Run a closure, translating errors and panics into status codes.
fn guarded(body: impl FnOnce() -> Result<(), i32>) -> i32 {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => BIP_OK,
        Ok(Err(code)) => code,
        Err(_) => {
            set_error("internal panic");
            BIP_ERR_INTERNAL
        }
    }
}

/// # Safety
/// `ptr` must be NULL or a valid NUL-terminated string.
unsafe fn required_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, i32> {
    if ptr.is_null() {
        set_error(&format!("{what} must not be NULL"));
        return Err(BIP_ERR_INPUT);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
        BIP_ERR_INPUT
    })
}

unsafe fn required_ref<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, i32> {
    ptr.as_ref().ok_or_else(|| {
        set_error(&format!("{what} must not be NULL"));
        BIP_ERR_INPUT
    })
}

/// Message of the last failed call on this thread. Never NULL; empty before
/// any failure. The pointer is invalidated by the next failing call.
#[no_mangle]
pub extern "C" fn bip_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Load a dataset through its JSON manifest. On success `*out` owns the
/// handle.
///
/// # Safety
/// `manifest_path` must be a valid NUL-terminated string and `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn bip_dataset_load(
    manifest_path: *const c_char,
    out: *mut *mut BipDataset,
) -> i32 {
    guarded(|| {
        if out.is_null() {
            set_error("out must not be NULL");
            return Err(BIP_ERR_INPUT);
        }
        let path = required_str(manifest_path, "manifest_path")?;
        let data = io::load_dataset(Path::new(path)).map_err(|e| error_code(&e))?;
        *out = Box::into_raw(Box::new(BipDataset(data)));
        Ok(())
    })
}

/// Rows in the dataset; -1 if the handle is NULL.
///
/// # Safety
/// `dataset` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn bip_dataset_n_rows(dataset: *const BipDataset) -> i64 {
    match dataset.as_ref() {
        Some(d) => d.0.n_rows() as i64,
        None => -1,
    }
}

/// Feature views in the dataset; -1 if the handle is NULL.
///
/// # Safety
/// `dataset` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn bip_dataset_n_views(dataset: *const BipDataset) -> i64 {
    match dataset.as_ref() {
        Some(d) => d.0.n_views() as i64,
        None => -1,
    }
}

/// Free a dataset handle. NULL is a no-op.
///
/// # Safety
/// `dataset` must be NULL or a live handle; it is dead afterwards.
#[no_mangle]
pub unsafe extern "C" fn bip_dataset_free(dataset: *mut BipDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Draw one synthetic benchmark replicate into `out_dir` (train/, test/,
/// truth.json), as the command-line `simulate` does.
///
/// # Safety
/// `out_dir` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bip_simulate(scenario_id: u32, seed: u64, out_dir: *const c_char) -> i32 {
    guarded(|| {
        let dir = Path::new(required_str(out_dir, "out_dir")?);
        let spec = scenario(scenario_id).map_err(|e| error_code(&e))?;
        let (train, test, truth) = gen_dataset(&spec, seed).map_err(|e| error_code(&e))?;
        io::write_dataset(&dir.join("train"), &train).map_err(|e| error_code(&e))?;
        io::write_dataset(&dir.join("test"), &test).map_err(|e| error_code(&e))?;
        io::write_json(&dir.join("truth.json"), &truth).map_err(|e| error_code(&e))?;
        Ok(())
    })
}

/// Fit a model. `method` is "bipmixed", "bip", or "pca2step"; `config_json`
/// is a sectioned run configuration (data/model/mcmc/prediction/output) or
/// NULL for defaults. On success `*out` owns the handle.
///
/// # Safety
/// `dataset` must be a live handle, strings valid or NULL as documented,
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bip_fit(
    dataset: *const BipDataset,
    method: *const c_char,
    config_json: *const c_char,
    out: *mut *mut BipModel,
) -> i32 {
    guarded(|| {
        if out.is_null() {
            set_error("out must not be NULL");
            return Err(BIP_ERR_INPUT);
        }
        let data = required_ref(dataset, "dataset")?;
        let method: Method = required_str(method, "method")?
            .parse()
            .map_err(|e| error_code(&e))?;
        let config: RunConfig = if config_json.is_null() {
            RunConfig::default()
        } else {
            let text = required_str(config_json, "config_json")?;
            serde_json::from_str(text).map_err(|e| {
                set_error(&format!("config_json: {e}"));
                BIP_ERR_INPUT
            })?
        };
        let hyper = config.hyperparameters().map_err(|e| error_code(&e))?;
        let options = config.fit_options();
        let archive = fit_method(method, &data.0, &hyper, &options).map_err(|e| error_code(&e))?;
        *out = Box::into_raw(Box::new(BipModel(archive)));
        Ok(())
    })
}

/// Archive a model as JSON.
///
/// # Safety
/// `model` must be a live handle; `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bip_model_save(model: *const BipModel, path: *const c_char) -> i32 {
    guarded(|| {
        let model = required_ref(model, "model")?;
        let path = required_str(path, "path")?;
        model.0.save(Path::new(path)).map_err(|e| error_code(&e))
    })
}

/// Load a model archived by `bip_model_save`. On success `*out` owns the
/// handle.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bip_model_load(path: *const c_char, out: *mut *mut BipModel) -> i32 {
    guarded(|| {
        if out.is_null() {
            set_error("out must not be NULL");
            return Err(BIP_ERR_INPUT);
        }
        let path = required_str(path, "path")?;
        let archive = ModelArchive::load(Path::new(path)).map_err(|e| error_code(&e))?;
        *out = Box::into_raw(Box::new(BipModel(archive)));
        Ok(())
    })
}

/// Predict the outcome for every row of `dataset`, writing into the caller's
/// buffer, which must hold exactly `bip_dataset_n_rows(dataset)` doubles.
///
/// # Safety
/// `model` and `dataset` must be live handles; `y_hat` must point to
/// `y_hat_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bip_predict(
    model: *const BipModel,
    dataset: *const BipDataset,
    y_hat: *mut f64,
    y_hat_len: usize,
) -> i32 {
    guarded(|| {
        let model = required_ref(model, "model")?;
        let data = required_ref(dataset, "dataset")?;
        if y_hat.is_null() {
            set_error("y_hat must not be NULL");
            return Err(BIP_ERR_INPUT);
        }
        if y_hat_len != data.0.n_rows() {
            set_error(&format!(
                "y_hat_len {} but the dataset has {} rows",
                y_hat_len,
                data.0.n_rows()
            ));
            return Err(BIP_ERR_INPUT);
        }
        let pred = model.0.predict(&data.0).map_err(|e| error_code(&e))?;
        std::ptr::copy_nonoverlapping(pred.as_slice().as_ptr(), y_hat, y_hat_len);
        Ok(())
    })
}

/// Free a model handle. NULL is a no-op.
///
/// # Safety
/// `model` must be NULL or a live handle; it is dead afterwards.
#[no_mangle]
pub unsafe extern "C" fn bip_model_free(model: *mut BipModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
