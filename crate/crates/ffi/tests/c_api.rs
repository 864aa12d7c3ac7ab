use std::ffi::{c_void, CStr, CString};
use std::ptr;

use prodist_ffi::*;

fn p0() -> *mut PdProblem {
    let counts = [2usize, 2];
    let values = [0.0, 1.0, 1.0, 2.0];
    let mut p = ptr::null_mut();
    let s = unsafe { pd_problem_from_table(counts.as_ptr(), 2, values.as_ptr(), 4, &mut p) };
    assert_eq!(s, PdStatus::Ok);
    p
}

fn marginal(d: *const PdDistribution, agent: usize) -> Vec<f64> {
    let mut buf = [0.0; 8];
    let mut n = 0;
    assert_eq!(unsafe { pd_distribution_marginal(d, agent, buf.as_mut_ptr(), buf.len(), &mut n) }, PdStatus::Ok);
    buf[..n].to_vec()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(pd_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(pd_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn table_problem_queries() {
    let p = p0();
    let mut n = 0;
    unsafe {
        assert_eq!(pd_problem_agent_count(p, &mut n), PdStatus::Ok);
        assert_eq!(n, 2);
        assert_eq!(pd_problem_move_count(p, 1, &mut n), PdStatus::Ok);
        assert_eq!(n, 2);
        assert_eq!(pd_problem_move_count(p, 5, &mut n), PdStatus::InvalidArgument);

        let mut g = 0.0;
        assert_eq!(pd_problem_evaluate(p, [1usize, 1].as_ptr(), 2, &mut g), PdStatus::Ok);
        assert_eq!(g, 2.0);

        let mut u = ptr::null_mut();
        assert_eq!(pd_distribution_uniform(p, &mut u), PdStatus::Ok);
        let mut v = 0.0;
        assert_eq!(pd_exact_expectation(p, u, &mut v), PdStatus::Ok);
        assert!((v - 1.0).abs() < 1e-15);
        assert_eq!(pd_distribution_entropy(u, &mut v), PdStatus::Ok);
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(pd_lagrangian(p, u, 1.0, &mut v), PdStatus::Ok);
        assert!((v - (1.0 - 2.0 * 2f64.ln())).abs() < 1e-12);

        let mut x = [9usize; 2];
        assert_eq!(pd_global_minimum(p, x.as_mut_ptr(), 2, &mut v), PdStatus::Ok);
        assert_eq!((x, v), ([0, 0], 0.0));
        assert_eq!(pd_global_minimum(p, x.as_mut_ptr(), 1, &mut v), PdStatus::BufferTooSmall);

        pd_distribution_free(u);
        pd_problem_free(p);
    }
}

#[test]
fn steps_return_new_handles() {
    let p = p0();
    unsafe {
        let mut u = ptr::null_mut();
        pd_distribution_uniform(p, &mut u);
        let mut g = ptr::null_mut();
        assert_eq!(pd_gradient_step(p, u, 1.0, 0.1, 1e-9, &mut g), PdStatus::Ok);
        let m = marginal(g, 0);
        assert!((m[0] - 0.55).abs() < 1e-12);

        let mut nn = ptr::null_mut();
        assert_eq!(pd_nearest_newton_step(p, u, 0.0, 1e-9, &mut nn), PdStatus::Ok);
        assert!((marginal(nn, 1)[0] - 0.5).abs() < 1e-12);

        let mut b = ptr::null_mut();
        assert_eq!(pd_brouwer_step(p, u, 1.0, 1.0, &mut b), PdStatus::Ok);
        let mut c = ptr::null_mut();
        assert_eq!(pd_canonical_marginals(p, 1.0, &mut c), PdStatus::Ok);
        let e = (-1f64).exp();
        assert!((marginal(c, 0)[0] - (1.0 + e) / (1.0 + 2.0 * e + e * e)).abs() < 1e-12);
        // One undamped Brouwer step from uniform is the Boltzmann response to
        // E(G | x_i) = (0.5, 1.5).
        assert!((marginal(b, 0)[0] - 1.0 / (1.0 + e)).abs() < 1e-12);

        assert_eq!(pd_brouwer_step(p, u, 1.0, 0.0, &mut b), PdStatus::InvalidArgument);
        assert!(last_error().contains("mixing"));

        for d in [u, g, nn, b, c] {
            pd_distribution_free(d);
        }
        pd_problem_free(p);
    }
}

#[test]
fn marginals_roundtrip_and_validation() {
    let p = p0();
    unsafe {
        let mut d = ptr::null_mut();
        let flat = [0.7, 0.3, 0.2, 0.8];
        assert_eq!(pd_distribution_from_marginals(p, flat.as_ptr(), 4, &mut d), PdStatus::Ok);
        assert_eq!(marginal(d, 1), vec![0.2, 0.8]);
        let mut n = 0;
        let mut small = [0.0; 1];
        assert_eq!(pd_distribution_marginal(d, 0, small.as_mut_ptr(), 1, &mut n), PdStatus::BufferTooSmall);
        assert_eq!(n, 2);
        pd_distribution_free(d);

        let bad = [0.7, 0.7, 0.2, 0.8];
        let mut e = ptr::null_mut();
        assert_eq!(pd_distribution_from_marginals(p, bad.as_ptr(), 4, &mut e), PdStatus::InvalidDistribution);
        assert!(e.is_null());
        assert_eq!(pd_distribution_from_marginals(p, bad.as_ptr(), 3, &mut e), PdStatus::DimensionMismatch);
        pd_problem_free(p);
    }
}

#[test]
fn null_pointers_are_reported() {
    unsafe {
        let mut v = 0.0;
        assert_eq!(pd_distribution_entropy(ptr::null(), &mut v), PdStatus::NullPointer);
        assert!(last_error().contains("null"));
        let mut p = ptr::null_mut();
        assert_eq!(pd_problem_from_table(ptr::null(), 2, ptr::null(), 4, &mut p), PdStatus::NullPointer);
        pd_problem_free(ptr::null_mut());
        pd_distribution_free(ptr::null_mut());
        pd_string_free(ptr::null_mut());
    }
}

#[test]
fn generators() {
    unsafe {
        let name = CString::new("congestion").unwrap();
        let mut p = ptr::null_mut();
        assert_eq!(pd_problem_generate(name.as_ptr(), 2, 2, 0, &mut p), PdStatus::Ok);
        let mut g = 0.0;
        pd_problem_evaluate(p, [1usize, 1].as_ptr(), 2, &mut g);
        assert_eq!(g, 2.0);
        pd_problem_free(p);

        let bad = CString::new("nope").unwrap();
        assert_eq!(pd_problem_generate(bad.as_ptr(), 2, 2, 0, &mut p), PdStatus::InvalidArgument);
        assert!(last_error().contains("nope"));
    }
}

extern "C" fn weighted_sum(user: *mut c_void, x: *const usize, n: usize, out: *mut f64) -> i32 {
    let w = unsafe { *(user as *const f64) };
    let x = unsafe { std::slice::from_raw_parts(x, n) };
    if x.contains(&2) {
        return 7;
    }
    unsafe { *out = w * x.iter().sum::<usize>() as f64 };
    0
}

#[test]
fn callback_problem() {
    let mut weight = 3.0f64;
    let counts = [3usize, 3];
    unsafe {
        let mut p = ptr::null_mut();
        let user = &mut weight as *mut f64 as *mut c_void;
        assert_eq!(pd_problem_from_callback(counts.as_ptr(), 2, Some(weighted_sum), user, &mut p), PdStatus::Ok);
        let mut g = 0.0;
        assert_eq!(pd_problem_evaluate(p, [1usize, 1].as_ptr(), 2, &mut g), PdStatus::Ok);
        assert_eq!(g, 6.0);
        assert_eq!(pd_problem_evaluate(p, [2usize, 0].as_ptr(), 2, &mut g), PdStatus::UtilityFailure);
        assert!(last_error().contains("7"));
        pd_problem_free(p);
        assert_eq!(pd_problem_from_callback(counts.as_ptr(), 2, None, user, &mut p), PdStatus::NullPointer);
    }
}

#[test]
fn run_json_returns_summary_and_trace() {
    let config = CString::new(
        r#"{"problem":{"generator":{"name":"sum","agents":2,"moves":2}},"algorithm":"gradient","schedule":{"rounds":2,"inner_steps":5}}"#,
    )
    .unwrap();
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(pd_run_json(config.as_ptr(), &mut out), PdStatus::Ok);
        let text = CStr::from_ptr(out).to_str().unwrap().to_owned();
        pd_string_free(out);
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(doc["summary"]["best_g"].is_number());
        assert_eq!(doc["trace"][0]["step"], 0);

        let bad = CString::new(r#"{"algorithm":"gradient"}"#).unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(pd_run_json(bad.as_ptr(), &mut none), PdStatus::InvalidArgument);
        assert!(none.is_null());
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/prodist.h")).unwrap();
    for name in [
        "pd_version",
        "pd_last_error_message",
        "pd_problem_from_table",
        "pd_problem_generate",
        "pd_problem_from_callback",
        "pd_problem_free",
        "pd_distribution_uniform",
        "pd_distribution_marginal",
        "pd_gradient_step",
        "pd_nearest_newton_step",
        "pd_brouwer_step",
        "pd_canonical_marginals",
        "pd_global_minimum",
        "pd_run_json",
        "pd_string_free",
        "typedef struct PdProblem PdProblem",
        "PD_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "header is missing {name}");
    }
}
