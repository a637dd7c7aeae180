use std::ffi::{CStr, CString};
use std::ptr;

use bipartite_ffi::*;

fn last_code() -> String {
    let p = bp_last_error_code();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn simulate(n: usize, seed: u64) -> *mut BpDataset {
    let cfg = CString::new(format!(r#"{{"n_outcome": {n}, "n_interventional": 40, "seed": {seed}}}"#)).unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { bp_dataset_simulate(cfg.as_ptr(), &mut ds) }, BpStatus::Ok);
    assert!(!ds.is_null());
    ds
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(bp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn simulate_fit_and_read_back() {
    let ds = simulate(1500, 3);
    let (mut n, mut j) = (0usize, 0usize);
    assert_eq!(unsafe { bp_dataset_dims(ds, &mut n, &mut j) }, BpStatus::Ok);
    assert_eq!((n, j), (1500, 40));

    let mut ex = ptr::null_mut();
    assert_eq!(unsafe { bp_exposures_derive(ds, &mut ex) }, BpStatus::Ok);
    let mut len = 0usize;
    assert_eq!(unsafe { bp_exposures_len(ex, &mut len) }, BpStatus::Ok);
    assert_eq!(len, 1500);
    let mut g_max: f64 = 0.0;
    for i in 0..len {
        let (mut key, mut z, mut g_raw, mut g) = (0usize, 0u8, 0.0, 0.0);
        assert_eq!(unsafe { bp_exposures_get(ex, i, &mut key, &mut z, &mut g_raw, &mut g) }, BpStatus::Ok);
        assert!(key < 40 && z <= 1 && (0.0..=1.0).contains(&g));
        g_max = g_max.max(g);
    }
    assert_eq!(g_max, 1.0);
    assert_eq!(unsafe { bp_exposures_get(ex, len, ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) }, BpStatus::OutOfRange);
    unsafe { bp_exposures_free(ex) };

    let mut est = ptr::null_mut();
    assert_eq!(unsafe { bp_estimate_fit(ds, ptr::null(), &mut est) }, BpStatus::Ok);
    let mut tau = f64::NAN;
    assert_eq!(unsafe { bp_estimate_value(est, BpEstimand::Tau, &mut tau) }, BpStatus::Ok);
    assert!(tau.is_finite());

    let mut glen = 0usize;
    assert_eq!(unsafe { bp_estimate_grid_len(est, &mut glen) }, BpStatus::Ok);
    assert_eq!(glen, 51);
    let mut grid = vec![0.0; glen];
    let mut mu0 = vec![0.0; glen];
    let mut mu1 = vec![0.0; glen];
    assert_eq!(unsafe { bp_estimate_curve(est, 0, grid.as_mut_ptr(), mu0.as_mut_ptr(), glen) }, BpStatus::Ok);
    assert_eq!(unsafe { bp_estimate_curve(est, 1, ptr::null_mut(), mu1.as_mut_ptr(), glen) }, BpStatus::Ok);
    assert_eq!(grid[0], 0.0);
    assert!((grid[50] - 1.0).abs() < 1e-12);
    assert!(mu0.iter().chain(&mu1).all(|v| v.is_finite() && *v >= 0.0));
    assert_eq!(unsafe { bp_estimate_curve(est, 2, ptr::null_mut(), mu1.as_mut_ptr(), glen) }, BpStatus::OutOfRange);
    assert_eq!(unsafe { bp_estimate_curve(est, 0, ptr::null_mut(), mu1.as_mut_ptr(), glen - 1) }, BpStatus::OutOfRange);

    let mut lo = 0.0;
    let mut hi = 0.0;
    assert_eq!(unsafe { bp_estimate_interval(est, BpEstimand::Tau, &mut lo, &mut hi) }, BpStatus::OutOfRange);
    assert_eq!(last_code(), "ffi.no_intervals");

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { bp_estimate_to_json(est, &mut json) }, BpStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_string();
    unsafe { bp_string_free(json) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["tau"].as_f64().unwrap(), tau);

    unsafe {
        bp_estimate_free(est);
        bp_dataset_free(ds);
    }
}

#[test]
fn bootstrap_intervals_bracket_estimates() {
    let ds = simulate(800, 11);
    let mut est = ptr::null_mut();
    assert_eq!(unsafe { bp_estimate_bootstrap(ds, ptr::null(), 40, 7, 0.9, 2, &mut est) }, BpStatus::Ok);
    for which in [BpEstimand::Tau, BpEstimand::Delta0, BpEstimand::Delta1] {
        let (mut v, mut lo, mut hi) = (0.0, 0.0, 0.0);
        assert_eq!(unsafe { bp_estimate_value(est, which, &mut v) }, BpStatus::Ok);
        assert_eq!(unsafe { bp_estimate_interval(est, which, &mut lo, &mut hi) }, BpStatus::Ok);
        assert!(lo <= hi && lo.is_finite() && hi.is_finite());
    }
    let mut again = ptr::null_mut();
    assert_eq!(unsafe { bp_estimate_bootstrap(ds, ptr::null(), 40, 7, 0.9, 1, &mut again) }, BpStatus::Ok);
    let (mut a, mut b) = ((0.0, 0.0), (0.0, 0.0));
    unsafe {
        bp_estimate_interval(est, BpEstimand::Delta1, &mut a.0, &mut a.1);
        bp_estimate_interval(again, BpEstimand::Delta1, &mut b.0, &mut b.1);
    }
    assert_eq!(a, b);
    unsafe {
        bp_estimate_free(est);
        bp_estimate_free(again);
        bp_dataset_free(ds);
    }
}

#[test]
fn null_arguments_are_rejected() {
    let mut est = ptr::null_mut();
    assert_eq!(unsafe { bp_estimate_fit(ptr::null(), ptr::null(), &mut est) }, BpStatus::NullPointer);
    assert_eq!(last_code(), "ffi.null_pointer");
    assert!(est.is_null());
    assert_eq!(unsafe { bp_dataset_simulate(ptr::null(), ptr::null_mut()) }, BpStatus::NullPointer);
    let mut v = 0.0;
    assert_eq!(unsafe { bp_estimate_value(ptr::null(), BpEstimand::Tau, &mut v) }, BpStatus::NullPointer);
    // freeing null is a no-op
    unsafe {
        bp_dataset_free(ptr::null_mut());
        bp_exposures_free(ptr::null_mut());
        bp_estimate_free(ptr::null_mut());
        bp_string_free(ptr::null_mut());
    }
}

#[test]
fn invalid_inputs_map_to_status_and_code() {
    let bad = CString::new(r#"{"n_outcome": 10, "sigma": -1}"#).unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { bp_dataset_simulate(bad.as_ptr(), &mut ds) }, BpStatus::Validation);
    assert_eq!(last_code(), "synth.invalid_config");

    let unknown = CString::new(r#"{"n_outcome": 10, "colour": 1}"#).unwrap();
    assert_eq!(unsafe { bp_dataset_simulate(unknown.as_ptr(), &mut ds) }, BpStatus::InvalidArgument);
    assert!(ds.is_null());
}

#[test]
fn negative_weight_file_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    std::fs::write(p("interventional.csv"), "id,treated,u1\nA,1,0.5\nB,0,-0.2\n").unwrap();
    std::fs::write(p("outcome.csv"), "id,outcome,offset,x1\nr1,3,100,1.0\nr2,4,120,2.0\n").unwrap();
    std::fs::write(p("interference.csv"), "outcome_id,interventional_id,weight\nr1,A,0.5\nr1,B,-0.1\nr2,B,0.3\n").unwrap();
    let c = |name: &str| CString::new(p(name).to_str().unwrap()).unwrap();
    let schema = CString::new(r#"{"x_int_z": ["u1"], "x_out_outcome": ["x1"], "family": "poisson_offset"}"#).unwrap();
    let mut ds = ptr::null_mut();
    let status = unsafe {
        bp_dataset_load(c("interventional.csv").as_ptr(), c("outcome.csv").as_ptr(), c("interference.csv").as_ptr(), schema.as_ptr(), &mut ds)
    };
    assert_eq!(status, BpStatus::Validation);
    assert_eq!(last_code(), "data.negative_weight");
    let msg = unsafe { CStr::from_ptr(bp_last_error_message()) }.to_str().unwrap();
    assert!(msg.contains("-0.1"), "{msg}");
    assert!(ds.is_null());
}
