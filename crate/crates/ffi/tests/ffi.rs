use std::ffi::CStr;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use ssls::estimator::{repeated_ssls, SslsConfig};
use ssls::learners::{LearnerConfig, DEFAULT_CLIP};
use ssls::simulation::dgp::{draw_dgp1, Dgp1Config};
use ssls_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ssls_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

struct Owned(*mut SslsDataset);

impl Drop for Owned {
    fn drop(&mut self) {
        unsafe { ssls_dataset_free(self.0) }
    }
}

fn dataset(n: usize) -> (Owned, ssls::simulation::dgp::Dgp1Draw) {
    let draw = draw_dgp1(&Dgp1Config {
        n,
        seed: 5,
        ..Dgp1Config::default()
    })
    .unwrap();
    let labels = draw.grouping.labels().to_vec();
    let mut out = ptr::null_mut();
    let st = unsafe {
        ssls_dataset_new(
            draw.data.y.as_ptr(),
            draw.data.a.as_ptr(),
            draw.data.x.as_slice().as_ptr(),
            n,
            draw.data.x.ncols(),
            labels.as_ptr(),
            4,
            ptr::null(),
            &mut out,
        )
    };
    assert_eq!(st, SslsStatus::Ok, "{}", last_error());
    (Owned(out), draw)
}

fn linear_options() -> SslsOptions {
    SslsOptions {
        learner_y: SslsLearner::Ols,
        learner_e: SslsLearner::Logistic,
        repeats: 3,
        seed: 11,
        ..ssls_options_default()
    }
}

#[test]
fn estimate_matches_library() {
    let (d, draw) = dataset(800);
    let opts = linear_options();
    let mut eff = ptr::null_mut();
    assert_eq!(unsafe { ssls_estimate(d.0, &opts, &mut eff) }, SslsStatus::Ok, "{}", last_error());

    let mut cfg = SslsConfig::new(
        LearnerConfig::Ols.regression_spec(None).unwrap(),
        LearnerConfig::logistic().propensity_spec(DEFAULT_CLIP, None, None).unwrap(),
    );
    cfg.plan.repeats = 3;
    cfg.plan.seed = 11;
    cfg.plan.stratified = true;
    let direct = repeated_ssls(&draw.data, &draw.grouping, &cfg).unwrap().effects;

    assert_eq!(unsafe { ssls_effects_n_groups(eff) }, 4);
    for g in 0..4 {
        let (mut tau, mut se, mut n_g) = (0.0, 0.0, 0usize);
        assert_eq!(unsafe { ssls_effects_get(eff, g, &mut tau, &mut se, &mut n_g) }, SslsStatus::Ok);
        assert_eq!(tau, direct.tau_hat[g]);
        assert_eq!(se, direct.se()[g]);
        assert_eq!(n_g, direct.n_g[g]);
    }
    assert_eq!(
        unsafe { ssls_effects_get(eff, 4, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) },
        SslsStatus::InvalidArgument
    );
    assert!(last_error().contains("out of range"));

    let tau0 = [1.0, 2.0, 3.0, 4.0];
    let mut tests = [SslsGroupTest::default(); 4];
    assert_eq!(
        unsafe { ssls_effects_inference(eff, tau0.as_ptr(), 0.05, tests.as_mut_ptr(), 4) },
        SslsStatus::Ok
    );
    for (k, t) in tests.iter().enumerate() {
        assert!((t.t_stat - (t.tau_hat - tau0[k]) / t.se).abs() < 1e-12);
        assert!(t.ci_simul_lo < t.ci_lo && t.ci_hi < t.ci_simul_hi);
    }

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { ssls_effects_to_json(eff, &mut json) }, SslsStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { ssls_string_free(json) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["tau_hat"].as_array().unwrap().len(), 4);
    unsafe { ssls_effects_free(eff) };
}

#[test]
fn error_codes() {
    let mut out = ptr::null_mut();
    let y = [1.0, 2.0];
    let a = [0u8, 2];
    let g = [1usize, 1];
    let st = unsafe {
        ssls_dataset_new(y.as_ptr(), a.as_ptr(), ptr::null(), 2, 0, g.as_ptr(), 1, ptr::null(), &mut out)
    };
    assert_eq!(st, SslsStatus::InvalidInput);
    assert!(out.is_null());
    assert!(!last_error().is_empty());

    let st = unsafe {
        ssls_dataset_new(ptr::null(), a.as_ptr(), ptr::null(), 2, 0, g.as_ptr(), 1, ptr::null(), &mut out)
    };
    assert_eq!(st, SslsStatus::NullPointer);

    let mut q = 0.0;
    assert_eq!(unsafe { ssls_maxt_critical(1.5, 4, &mut q) }, SslsStatus::InvalidArgument);
    assert_eq!(unsafe { ssls_maxt_critical(0.05, 1, &mut q) }, SslsStatus::Ok);
    assert!((q - 1.959964).abs() < 1e-6);
    assert!(last_error().is_empty());

    let mut n = 0u64;
    assert_eq!(unsafe { ssls_power_min_n(1.0, 0.05, 0.8, &mut n) }, SslsStatus::Ok);
    assert_eq!(n, 8);
    assert_eq!(unsafe { ssls_power_min_n(0.0, 0.05, 0.8, &mut n) }, SslsStatus::InvalidArgument);
    assert_eq!(unsafe { ssls_power_min_n(1.0, 0.05, 0.8, ptr::null_mut()) }, SslsStatus::NullPointer);

    // known propensity requested without a propensity column
    let (d, _) = dataset(200);
    let opts = SslsOptions {
        learner_e: SslsLearner::Known,
        ..linear_options()
    };
    let mut eff = ptr::null_mut();
    assert_ne!(unsafe { ssls_estimate(d.0, &opts, &mut eff) }, SslsStatus::Ok);
    assert!(eff.is_null());
    assert_eq!(unsafe { ssls_effects_n_groups(ptr::null()) }, 0);
}

/// The C program's fixture, estimated through the same entry points.
fn rust_side_tau() -> f64 {
    let y = [3.1, 1.0, 2.7, 0.4, 3.5, 1.2, 2.2, 0.9];
    let a = [1u8, 0, 1, 0, 1, 0, 1, 0];
    let x = [0.2, 0.4, 0.9, 0.1, 0.5, 0.7, 0.3, 0.6];
    let g = [1usize; 8];
    let p = [0.5; 8];
    let mut d = ptr::null_mut();
    let opts = SslsOptions {
        learner_y: SslsLearner::Ols,
        learner_e: SslsLearner::Known,
        ..ssls_options_default()
    };
    let mut e = ptr::null_mut();
    let mut tau = f64::NAN;
    unsafe {
        assert_eq!(
            ssls_dataset_new(y.as_ptr(), a.as_ptr(), x.as_ptr(), 8, 1, g.as_ptr(), 1, p.as_ptr(), &mut d),
            SslsStatus::Ok
        );
        assert_eq!(ssls_estimate(d, &opts, &mut e), SslsStatus::Ok, "{}", last_error());
        ssls_effects_get(e, 0, &mut tau, ptr::null_mut(), ptr::null_mut());
        ssls_effects_free(e);
        ssls_dataset_free(d);
    }
    tau
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "ssls.h"

int main(void) {
    double y[8] = {3.1, 1.0, 2.7, 0.4, 3.5, 1.2, 2.2, 0.9};
    uint8_t a[8] = {1, 0, 1, 0, 1, 0, 1, 0};
    double x[8] = {0.2, 0.4, 0.9, 0.1, 0.5, 0.7, 0.3, 0.6};
    size_t g[8] = {1, 1, 1, 1, 1, 1, 1, 1};
    double p[8] = {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
    SslsDataset *d = NULL;
    if (ssls_dataset_new(y, a, x, 8, 1, g, 1, p, &d) != SSLS_STATUS_OK) {
        fprintf(stderr, "%s\n", ssls_last_error_message());
        return 1;
    }
    SslsOptions o = ssls_options_default();
    o.learner_y = SSLS_LEARNER_OLS;
    o.learner_e = SSLS_LEARNER_KNOWN;
    SslsEffects *e = NULL;
    if (ssls_estimate(d, &o, &e) != SSLS_STATUS_OK) {
        fprintf(stderr, "%s\n", ssls_last_error_message());
        return 2;
    }
    double tau, se;
    size_t n;
    ssls_effects_get(e, 0, &tau, &se, &n);
    double q;
    ssls_maxt_critical(0.05, 45, &q);
    printf("%zu %.4f %.5f\n", n, tau, q);
    ssls_effects_free(e);
    ssls_dataset_free(d);
    return 0;
}
"#;

/// Compiles a C program against the generated header and the static
/// library. Skipped when no C compiler is available.
#[test]
fn c_program_links_against_header() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // test builds only link the rlib, so build the static library separately
    let target = manifest.join("../../target/c-smoke");
    let built = Command::new(env!("CARGO"))
        .args(["build", "--quiet", "-p", "ssls-ffi", "--lib", "--target-dir"])
        .arg(&target)
        .current_dir(&manifest)
        .status()
        .unwrap();
    assert!(built.success());
    let lib = target.join("debug/libssls_ffi.a");
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    let exe = tmp.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), format!("8 {:.4} 3.25368", rust_side_tau()));
}
