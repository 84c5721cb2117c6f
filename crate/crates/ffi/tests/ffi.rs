use std::ffi::{CStr, CString};
use std::ptr;

use locimp_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(locimp_last_error()) }.to_string_lossy().into_owned()
}

struct Fixture {
    table: *mut LocimpTable,
    forest: *mut LocimpForest,
    labelled: *mut LocimpTable,
    importance_forest: *mut LocimpForest,
    importance: *mut LocimpImportance,
    n: usize,
    d: usize,
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe {
            locimp_importance_free(self.importance);
            locimp_forest_free(self.importance_forest);
            locimp_table_free(self.labelled);
            locimp_forest_free(self.forest);
            locimp_table_free(self.table);
        }
    }
}

/// Dataset 1 through the whole C surface: generate, train, relabel with
/// predictions, importance forest, importances.
fn fixture() -> Fixture {
    let (n, d) = (150, 4);
    unsafe {
        let mut table = ptr::null_mut();
        assert_eq!(locimp_generate_synthetic(1, n, d, 7, &mut table), LocimpStatus::Ok);
        let mut forest = ptr::null_mut();
        assert_eq!(locimp_forest_train(table, 60, 0, 5, 8, &mut forest), LocimpStatus::Ok);
        let mut x = vec![0.0; n * d];
        assert_eq!(locimp_table_features(table, x.as_mut_ptr(), x.len()), LocimpStatus::Ok);
        let mut f = vec![0.0; n];
        assert_eq!(locimp_forest_predict(forest, x.as_ptr(), n, d, f.as_mut_ptr()), LocimpStatus::Ok);
        let mut labelled = ptr::null_mut();
        assert_eq!(locimp_table_with_target(table, f.as_ptr(), n, &mut labelled), LocimpStatus::Ok);
        let mut importance_forest = ptr::null_mut();
        assert_eq!(locimp_forest_train(labelled, 60, 0, 5, 9, &mut importance_forest), LocimpStatus::Ok);
        let mut importance = ptr::null_mut();
        assert_eq!(locimp_importance_compute(importance_forest, labelled, 10, &mut importance), LocimpStatus::Ok);
        Fixture {
            table,
            forest,
            labelled,
            importance_forest,
            importance,
            n,
            d,
        }
    }
}

#[test]
fn pipeline_through_the_c_surface() {
    let fx = fixture();
    unsafe {
        assert_eq!(locimp_table_n(fx.labelled), fx.n);
        assert_eq!(locimp_table_d(fx.labelled), fx.d);

        let mut w = vec![0.0; fx.n * fx.d];
        assert_eq!(locimp_importance_weights(fx.importance, w.as_mut_ptr(), w.len()), LocimpStatus::Ok);
        for row in w.chunks(fx.d) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        let mut intercept = 0.0;
        let mut coefs = vec![0.0; fx.d];
        let mut effects = vec![0.0; fx.d];
        let status = locimp_varimp_explain(
            fx.labelled,
            fx.importance,
            3,
            0.5,
            0,
            &mut intercept,
            coefs.as_mut_ptr(),
            effects.as_mut_ptr(),
            fx.d,
        );
        assert_eq!(status, LocimpStatus::Ok, "{}", last_error());
        assert!(last_error().is_empty());
        let mut x = vec![0.0; fx.n * fx.d];
        locimp_table_features(fx.labelled, x.as_mut_ptr(), x.len());
        for j in 0..fx.d {
            assert_eq!(effects[j], coefs[j] * x[3 * fx.d + j]);
        }
        // The first two features drive dataset 1 with slopes +5 and -5.
        assert!(coefs[0] > 0.0 && coefs[1] < 0.0);

        let mut truth = vec![0.0; fx.n * fx.d];
        assert_eq!(locimp_true_coefficients(1, fx.table, truth.as_mut_ptr(), truth.len()), LocimpStatus::Ok);
        assert_eq!(&truth[..fx.d], &[5.0, -5.0, 0.0, 0.0]);
    }
}

#[test]
fn error_codes_and_messages() {
    let fx = fixture();
    unsafe {
        let mut intercept = 0.0;
        let mut coefs = vec![0.0; fx.d];
        let status = locimp_varimp_explain(
            fx.labelled,
            fx.importance,
            fx.n,
            0.5,
            0,
            &mut intercept,
            coefs.as_mut_ptr(),
            ptr::null_mut(),
            fx.d,
        );
        assert_eq!(status, LocimpStatus::IndexOutOfRange);
        assert!(last_error().contains("out of range"), "{}", last_error());

        let status = locimp_varimp_explain(fx.labelled, fx.importance, 0, -1.0, 0, &mut intercept, ptr::null_mut(), ptr::null_mut(), fx.d);
        assert_eq!(status, LocimpStatus::InvalidArgument);
        assert!(last_error().contains("bandwidth"));

        let status = locimp_varimp_explain(ptr::null(), fx.importance, 0, 0.5, 0, &mut intercept, ptr::null_mut(), ptr::null_mut(), fx.d);
        assert_eq!(status, LocimpStatus::NullPointer);

        let row = vec![0.5; fx.d + 1];
        let mut out = 0.0;
        assert_eq!(locimp_forest_predict(fx.forest, row.as_ptr(), 1, fx.d + 1, &mut out), LocimpStatus::DimensionMismatch);

        let mut t = ptr::null_mut();
        assert_eq!(locimp_generate_synthetic(9, 10, 3, 0, &mut t), LocimpStatus::InvalidArgument);
        assert!(t.is_null());
        assert!(last_error().contains("dataset"));

        let x = [1.0, f64::NAN];
        let y = [0.0, 1.0];
        assert_eq!(locimp_table_new(x.as_ptr(), 2, 1, y.as_ptr(), &mut t), LocimpStatus::InvalidArgument);

        let missing = CString::new("/nonexistent/model.json").unwrap();
        let mut f = ptr::null_mut();
        assert_eq!(locimp_forest_load(missing.as_ptr(), &mut f), LocimpStatus::Io);

        locimp_table_free(ptr::null_mut());
        locimp_forest_free(ptr::null_mut());
        locimp_importance_free(ptr::null_mut());
    }
}

#[test]
fn forest_save_load_round_trip() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(locimp_forest_save(fx.forest, path.as_ptr()), LocimpStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(locimp_forest_load(path.as_ptr(), &mut loaded), LocimpStatus::Ok);
        let rows = [0.1, 0.9, 0.3, 0.4, 0.8, 0.2, 0.6, 0.5];
        let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
        locimp_forest_predict(fx.forest, rows.as_ptr(), 2, fx.d, a.as_mut_ptr());
        locimp_forest_predict(loaded, rows.as_ptr(), 2, fx.d, b.as_mut_ptr());
        assert_eq!(a, b);
        locimp_forest_free(loaded);
    }
}

#[test]
fn table_round_trip_and_version() {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let y = [0.5, 1.5, 2.5];
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(locimp_table_new(x.as_ptr(), 3, 2, y.as_ptr(), &mut t), LocimpStatus::Ok);
        let mut xs = [0.0; 6];
        let mut ys = [0.0; 3];
        assert_eq!(locimp_table_features(t, xs.as_mut_ptr(), 6), LocimpStatus::Ok);
        assert_eq!(locimp_table_target(t, ys.as_mut_ptr(), 3), LocimpStatus::Ok);
        assert_eq!((xs, ys), (x, y));
        assert_eq!(locimp_table_target(t, ys.as_mut_ptr(), 2), LocimpStatus::DimensionMismatch);
        locimp_table_free(t);
        let v = CStr::from_ptr(locimp_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn generated_header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/locimp.h")).unwrap();
    for name in [
        "LOCIMP_STATUS_OK",
        "LOCIMP_STATUS_INDEX_OUT_OF_RANGE",
        "typedef struct LocimpTable LocimpTable",
        "typedef struct LocimpForest LocimpForest",
        "typedef struct LocimpImportance LocimpImportance",
        "locimp_last_error",
        "locimp_generate_synthetic",
        "locimp_forest_train",
        "locimp_forest_predict",
        "locimp_importance_compute",
        "locimp_varimp_explain",
        "locimp_table_free",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
