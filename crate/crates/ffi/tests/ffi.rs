use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use bolf::cli::{save_weights, RunConfig};
use bolf::model::{attention_rollout, forward, init_params, Mode};
use bolf::tensor::Tensor;
use bolf_ffi::*;

fn last_error() -> String {
    let p = bolf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn image(seed: u32) -> Vec<f32> {
    (0..32 * 32).map(|i| (((i as u32).wrapping_mul(2654435761) ^ seed) % 1000) as f32 / 1000.0).collect()
}

fn init(seed: u64) -> *mut BolfModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { bolf_model_init(ptr::null(), seed, &mut m) }, BolfStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn dims_of_default_model() {
    let m = init(0);
    let (mut h, mut w, mut c, mut n) = (0, 0, 0, 0);
    assert_eq!(unsafe { bolf_model_dims(m, &mut h, &mut w, &mut c, &mut n) }, BolfStatus::Ok);
    assert_eq!((h, w, c, n), (32, 32, 1, 16));
    unsafe { bolf_model_free(m) };
}

#[test]
fn loaded_model_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let params = init_params(&cfg.model, 9, cfg.init.scheme());
    let weights = dir.path().join("w.bolf");
    save_weights(&weights, &params, &cfg.model).unwrap();
    let wpath = CString::new(weights.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { bolf_model_load(ptr::null(), wpath.as_ptr(), &mut m) }, BolfStatus::Ok);

    let px = image(1);
    let expect = forward(&Tensor::new(&[32, 32, 1], px.clone()).unwrap(), &params, &cfg.model, Mode::Eval).unwrap();
    let mut p = -1.0;
    assert_eq!(unsafe { bolf_predict(m, px.as_ptr(), px.len(), &mut p) }, BolfStatus::Ok);
    assert_eq!(p.to_bits(), expect.fake_probability().to_bits());

    let mut heat = vec![0.0; 16];
    let mut p2 = -1.0;
    assert_eq!(
        unsafe { bolf_rollout(m, px.as_ptr(), px.len(), heat.as_mut_ptr(), heat.len(), &mut p2) },
        BolfStatus::Ok
    );
    assert_eq!(p2, p);
    assert_eq!(heat, attention_rollout(&expect.record).unwrap().into_data());
    assert!((heat.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    unsafe { bolf_model_free(m) };
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut m = ptr::null_mut();
    let missing = CString::new("/nonexistent/w.bolf").unwrap();
    assert_eq!(unsafe { bolf_model_load(ptr::null(), missing.as_ptr(), &mut m) }, BolfStatus::Data);
    assert!(m.is_null());
    assert!(last_error().contains("/nonexistent/w.bolf"));

    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "model.nope = 1\n").unwrap();
    let conf = CString::new(conf.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { bolf_model_init(conf.as_ptr(), 0, &mut m) }, BolfStatus::Config);
    assert!(last_error().contains("model.nope"));

    assert_eq!(unsafe { bolf_model_init(ptr::null(), 0, ptr::null_mut()) }, BolfStatus::NullArgument);

    let m = init(1);
    let px = image(2);
    let mut p = 0.0;
    assert_eq!(unsafe { bolf_predict(m, px.as_ptr(), 100, &mut p) }, BolfStatus::Shape);
    assert!(last_error().contains("1024"));
    assert_eq!(unsafe { bolf_predict(m, ptr::null(), px.len(), &mut p) }, BolfStatus::NullArgument);
    assert_eq!(unsafe { bolf_predict(ptr::null(), px.as_ptr(), px.len(), &mut p) }, BolfStatus::NullArgument);
    let mut heat = [0.0; 4];
    assert_eq!(
        unsafe { bolf_rollout(m, px.as_ptr(), px.len(), heat.as_mut_ptr(), 4, ptr::null_mut()) },
        BolfStatus::Shape
    );
    let mut nan = px.clone();
    nan[0] = f32::NAN;
    assert_eq!(unsafe { bolf_predict(m, nan.as_ptr(), nan.len(), &mut p) }, BolfStatus::Numeric);
    unsafe {
        bolf_model_free(m);
        bolf_model_free(ptr::null_mut());
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(bolf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_is_valid_c_and_cpp() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/bolf.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in ["bolf_model_load", "bolf_model_free", "bolf_predict", "bolf_rollout", "bolf_last_error", "BOLF_STATUS_DATA = 3"] {
        assert!(text.contains(f), "header lacks {f}");
    }
    let src = r#"
        #include "bolf.h"
        int main(void) {
            BolfModel *m = 0;
            enum BolfStatus s = bolf_model_init(0, 7, &m);
            double heat[16];
            float px[1024] = {0};
            double p;
            if (s == BOLF_STATUS_OK) s = bolf_rollout(m, px, 1024, heat, 16, &p);
            bolf_model_free(m);
            return s == BOLF_STATUS_OK ? 0 : (bolf_last_error() != 0);
        }
    "#;
    let dir = tempfile::tempdir().unwrap();
    for (compiler, file, extra) in [("cc", "t.c", "-std=c99"), ("c++", "t.cpp", "-std=c++11")] {
        let path = dir.path().join(file);
        std::fs::write(&path, src).unwrap();
        let out = match Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", extra, "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
            .arg(&path)
            .output()
        {
            Ok(o) => o,
            Err(_) => {
                eprintln!("{compiler} not available, skipping");
                continue;
            }
        };
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let libdir = exe.parent().and_then(|d| d.parent()).unwrap().to_path_buf();
    if !libdir.join("libbolf_ffi.so").exists() {
        eprintln!("shared library not built next to the tests, skipping");
        return;
    }
    let src = r#"
        #include <stdio.h>
        #include "bolf.h"
        int main(void) {
            BolfModel *m = 0;
            size_t h, w, c, n;
            if (bolf_model_init(0, 3, &m) != BOLF_STATUS_OK) return 10;
            if (bolf_model_dims(m, &h, &w, &c, &n) != BOLF_STATUS_OK) return 11;
            float px[1024];
            for (int i = 0; i < 1024; i++) px[i] = (float)(i % 17) / 17.0f;
            double heat[16], p, sum = 0.0;
            if (bolf_rollout(m, px, h * w * c, heat, n, &p) != BOLF_STATUS_OK) return 12;
            for (size_t i = 0; i < n; i++) sum += heat[i];
            if (bolf_predict(m, px, 5, &p) != BOLF_STATUS_SHAPE) return 13;
            printf("%zu %.6f %s\n", n, sum, bolf_last_error());
            bolf_model_free(m);
            return 0;
        }
    "#;
    let dir = tempfile::tempdir().unwrap();
    let c_file = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&c_file, src).unwrap();
    let Ok(build) = Command::new("cc")
        .arg(&c_file)
        .args(["-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include"), "-L"])
        .arg(&libdir)
        .args(["-lbolf_ffi", "-o"])
        .arg(&bin)
        .output()
    else {
        eprintln!("cc not available, skipping");
        return;
    };
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));
    let run = Command::new(&bin).env("LD_LIBRARY_PATH", &libdir).output().unwrap();
    let out = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "exit {:?}: {out}", run.status.code());
    assert!(out.starts_with("16 1.000000 image has 5 values"), "{out}");
}
