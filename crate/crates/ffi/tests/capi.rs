use std::ffi::{CStr, CString};
use std::ptr;

use ret_ffi::*;

fn xor_arrays(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    // Low-discrepancy grid keeps the test free of an RNG dependency.
    for i in 0..n {
        let a = (i as f64 * 0.618_033_988_75).fract();
        let b = (i as f64 * 0.754_877_666_2).fract();
        x.extend([a, b]);
        y.push(if (a >= 0.5) != (b >= 0.5) { 1.0 } else { -1.0 });
    }
    (x, y)
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ret_last_error()) }.to_string_lossy().into_owned()
}

fn dataset(x: &[f64], y: &[f64]) -> *mut RetDataset {
    let mut ds = ptr::null_mut();
    let st = unsafe {
        ret_dataset_from_arrays(x.as_ptr(), y.len(), 2, y.as_ptr(), RetTask::BinaryClassification, &mut ds)
    };
    assert_eq!(st, RetStatus::Ok, "{}", last_error());
    ds
}

fn scsd_pool(ds: *const RetDataset, trees: usize) -> *mut RetPool {
    let depth = [2usize];
    let mut pool = ptr::null_mut();
    let st = unsafe {
        ret_pool_generate(ds, RetPoolKind::Scsd, trees, 1, depth.as_ptr(), 1, 0.1, 7, &mut pool)
    };
    assert_eq!(st, RetStatus::Ok, "{}", last_error());
    pool
}

#[test]
fn select_predict_and_round_trip_through_files() {
    let (x, y) = xor_arrays(200);
    let ds = dataset(&x, &y);
    assert_eq!(unsafe { ret_dataset_n_rows(ds) }, 200);
    assert_eq!(unsafe { ret_dataset_n_features(ds) }, 2);

    let pool = scsd_pool(ds, 40);
    assert_eq!(unsafe { ret_pool_len(pool) }, 40);

    let mut params = ret_fsa_params_default();
    params.k = 3;
    params.n_iter = 200;
    let mut model = ptr::null_mut();
    let st = unsafe { ret_select(pool, ds, &params, &mut model) };
    assert_eq!(st, RetStatus::Ok, "{}", last_error());
    let k = unsafe { ret_model_n_trees(model) };
    assert!((1..=3).contains(&k));
    assert!(unsafe { ret_model_intercept(model) }.is_finite());

    let mut scores = vec![0.0; 200];
    let st = unsafe { ret_model_predict(model, x.as_ptr(), 200, 2, scores.as_mut_ptr()) };
    assert_eq!(st, RetStatus::Ok);
    let mut a = 0.0;
    assert_eq!(unsafe { ret_auc(scores.as_ptr(), y.as_ptr(), 200, &mut a) }, RetStatus::Ok);
    assert!(a > 0.9, "auc {a}");

    let dir = tempfile::tempdir().unwrap();
    let mpath = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    let ppath = CString::new(dir.path().join("p.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ret_model_save(model, mpath.as_ptr()) }, RetStatus::Ok);
    assert_eq!(unsafe { ret_pool_save(pool, ppath.as_ptr()) }, RetStatus::Ok);

    let mut model2 = ptr::null_mut();
    assert_eq!(unsafe { ret_model_load(mpath.as_ptr(), &mut model2) }, RetStatus::Ok);
    let mut scores2 = vec![0.0; 200];
    unsafe { ret_model_predict(model2, x.as_ptr(), 200, 2, scores2.as_mut_ptr()) };
    assert_eq!(scores, scores2);

    let mut pool2 = ptr::null_mut();
    assert_eq!(unsafe { ret_pool_load(ppath.as_ptr(), &mut pool2) }, RetStatus::Ok);
    assert_eq!(unsafe { ret_pool_len(pool2) }, 40);

    unsafe {
        ret_model_free(model);
        ret_model_free(model2);
        ret_pool_free(pool);
        ret_pool_free(pool2);
        ret_dataset_free(ds);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let (x, y) = xor_arrays(50);
    let ds = dataset(&x, &y);
    let pool = scsd_pool(ds, 5);

    let mut params = ret_fsa_params_default();
    params.k = 6;
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { ret_select(pool, ds, &params, &mut model) }, RetStatus::Config);
    assert!(model.is_null());
    assert!(!last_error().is_empty());

    params.k = 1;
    assert_eq!(unsafe { ret_select(ptr::null(), ds, &params, &mut model) }, RetStatus::InvalidArgument);

    let mut bad = y.clone();
    bad[0] = 0.5;
    let mut ds2 = ptr::null_mut();
    let st = unsafe {
        ret_dataset_from_arrays(x.as_ptr(), 50, 2, bad.as_ptr(), RetTask::BinaryClassification, &mut ds2)
    };
    assert_eq!(st, RetStatus::Data);

    let missing = CString::new("/nonexistent/ret.csv").unwrap();
    let label = CString::new("label").unwrap();
    let st = unsafe {
        ret_dataset_from_csv(missing.as_ptr(), label.as_ptr(), RetTask::Regression, &mut ds2)
    };
    assert_ne!(st, RetStatus::Ok);

    unsafe {
        ret_pool_free(pool);
        ret_dataset_free(ds);
        ret_model_free(ptr::null_mut());
    }
}

#[test]
fn csv_loader_reads_named_label() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(&path, "a,label,b\n1,0.5,2\n3,1.5,4\n5,2.5,\n").unwrap();
    let p = CString::new(path.to_str().unwrap()).unwrap();
    let label = CString::new("label").unwrap();
    let mut ds = ptr::null_mut();
    let st = unsafe { ret_dataset_from_csv(p.as_ptr(), label.as_ptr(), RetTask::Regression, &mut ds) };
    assert_eq!(st, RetStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { ret_dataset_n_rows(ds) }, 2);
    assert_eq!(unsafe { ret_dataset_n_features(ds) }, 2);
    unsafe { ret_dataset_free(ds) };
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/ret.h")).unwrap();
    for name in [
        "ret_last_error",
        "ret_fsa_params_default",
        "ret_dataset_from_csv",
        "ret_dataset_from_arrays",
        "ret_pool_generate",
        "ret_select",
        "ret_model_predict",
        "ret_auc",
        "RET_STATUS_NUMERICAL = 4",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
