use std::ffi::{CStr, CString};
use std::ptr;

use brihmm_ffi::*;

fn new_engine(json: &str, m: usize, d: usize) -> (BrihmmStatus, *mut BrihmmEngine) {
    let cfg = CString::new(json).unwrap();
    let mut h = ptr::null_mut();
    let s = unsafe { brihmm_engine_new(cfg.as_ptr(), m, d, &mut h) };
    (s, h)
}

fn last_error() -> String {
    let p = brihmm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_stable() {
    assert_eq!(brihmm_abi_version(), BRIHMM_ABI_VERSION);
}

#[test]
fn bad_config_sets_last_error() {
    brihmm_clear_error();
    assert!(brihmm_last_error().is_null());
    let (s, h) = new_engine(r#"{"variant": "plain", "nparticles": 4}"#, 1, 1);
    assert_eq!(s, BrihmmStatus::Config);
    assert!(h.is_null());
    assert!(last_error().contains("nparticles"));

    let (s, _) = new_engine(r#"{"variant": "plain", "num_particles": 0}"#, 1, 1);
    assert_ne!(s, BrihmmStatus::Ok);

    let mut h = ptr::null_mut();
    assert_eq!(unsafe { brihmm_engine_new(ptr::null(), 1, 1, &mut h) }, BrihmmStatus::NullPointer);
}

#[test]
fn errors_are_thread_local() {
    let (s, _) = new_engine("not json", 1, 1);
    assert_eq!(s, BrihmmStatus::Config);
    std::thread::spawn(|| assert!(brihmm_last_error().is_null())).join().unwrap();
    assert!(!brihmm_last_error().is_null());
}

#[test]
fn batched_stream_round_trip() {
    let (s, h) = new_engine(
        r#"{"variant": "batched", "batch_size": 3, "num_particles": 16, "ess_threshold": 8, "seed": 2}"#,
        1,
        1,
    );
    assert_eq!(s, BrihmmStatus::Ok);
    let f = [1.0];
    let (mut mean, mut cov) = ([0.0], [0.0]);
    assert_eq!(
        unsafe { brihmm_engine_predict(h, f.as_ptr(), mean.as_mut_ptr(), cov.as_mut_ptr()) },
        BrihmmStatus::Ok
    );
    assert!(cov[0] > 0.0);

    let mut ready = 0usize;
    for (i, y) in [0.1, -0.2, 0.3, 0.0, 0.2].iter().enumerate() {
        let y = [*y];
        assert_eq!(unsafe { brihmm_engine_observe(h, f.as_ptr(), y.as_ptr(), &mut ready) }, BrihmmStatus::Ok);
        assert_eq!(ready, if i < 2 { 0 } else { 3 });
    }
    assert_eq!(unsafe { brihmm_engine_pending(h) }, 2);
    assert_eq!(unsafe { brihmm_engine_flush(h, &mut ready) }, BrihmmStatus::Ok);
    assert_eq!(ready, 5);
    assert_eq!(unsafe { brihmm_engine_tick(h) }, 5);

    let mut step = BrihmmStep::default();
    for t in 0..5u64 {
        assert_eq!(
            unsafe { brihmm_engine_next_result(h, &mut step, mean.as_mut_ptr(), ptr::null_mut()) },
            BrihmmStatus::Ok
        );
        assert_eq!(step.tick, t);
        assert!(mean[0].is_finite() && step.ess >= 1.0);
    }
    assert_eq!(
        unsafe { brihmm_engine_next_result(h, &mut step, ptr::null_mut(), ptr::null_mut()) },
        BrihmmStatus::Empty
    );
    unsafe { brihmm_engine_free(h) };
}

#[test]
fn matches_core_engine() {
    use brihmm::emission::EmissionContext;
    use brihmm::filter::{run_stream, FilterConfig, Variant};
    use nalgebra::DVector;

    let json = r#"{"variant": "wolf", "num_particles": 12, "ess_threshold": 6, "seed": 5, "obs_noise": 0.5}"#;
    let ys = [0.3, 1.2, -0.4, 4.0, 3.8, 4.1];
    let (_, h) = new_engine(json, 1, 1);
    let f = [1.0];
    let mut step = BrihmmStep::default();
    let mut means = Vec::new();
    for y in ys {
        let y = [y];
        let mut m = [0.0];
        unsafe {
            brihmm_engine_observe(h, f.as_ptr(), y.as_ptr(), ptr::null_mut());
            assert_eq!(brihmm_engine_next_result(h, &mut step, m.as_mut_ptr(), ptr::null_mut()), BrihmmStatus::Ok);
        }
        means.push(m[0]);
    }
    unsafe { brihmm_engine_free(h) };

    let cfg: FilterConfig = serde_json::from_str(json).unwrap();
    assert_eq!(cfg.variant, Variant::Wolf);
    let ctxs = vec![EmissionContext::identity(1, 0.5); ys.len()];
    let obs: Vec<_> = ys.iter().map(|&y| DVector::from_element(1, y)).collect();
    let out = run_stream(&cfg, &ctxs, &obs).unwrap();
    let core: Vec<f64> = out.outputs.iter().map(|o| o.predictive_mean[0]).collect();
    assert_eq!(means, core);
}

#[test]
fn null_handles_are_rejected() {
    let f = [1.0];
    let y = [0.0];
    unsafe {
        assert_eq!(
            brihmm_engine_observe(ptr::null_mut(), f.as_ptr(), y.as_ptr(), ptr::null_mut()),
            BrihmmStatus::NullPointer
        );
        assert_eq!(brihmm_engine_tick(ptr::null()), 0);
        brihmm_engine_free(ptr::null_mut());
    }
    let (_, h) = new_engine(r#"{"variant": "plain"}"#, 2, 1);
    let bad = [f64::NAN, 1.0];
    let status = unsafe { brihmm_engine_observe(h, bad.as_ptr(), y.as_ptr(), ptr::null_mut()) };
    assert_ne!(status, BrihmmStatus::Ok);
    unsafe { brihmm_engine_free(h) };
}
