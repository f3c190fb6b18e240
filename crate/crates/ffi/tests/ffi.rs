use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use dwrpca::synth::{generate, Defect, DefectKind, DefectSpec, MeshSpec};
use dwrpca_ffi::*;

fn last_error() -> String {
    let p = dw_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn image(img: &dwrpca::GrayImage) -> *mut DwImage {
    let mut h = ptr::null_mut();
    let st = unsafe { dw_image_new(img.height(), img.width(), img.data().as_ptr(), &mut h) };
    assert_eq!(st, DwStatus::Ok);
    h
}

fn mask_bytes(m: *const DwMask) -> Vec<u8> {
    let (mut h, mut w) = (0, 0);
    unsafe {
        assert_eq!(dw_mask_dims(m, &mut h, &mut w), DwStatus::Ok);
        let mut buf = vec![0u8; h * w];
        assert_eq!(dw_mask_read(m, buf.as_mut_ptr(), buf.len()), DwStatus::Ok);
        buf
    }
}

#[test]
fn detect_block_defect_through_handles() {
    let mesh = MeshSpec {
        image_size: 96,
        ..MeshSpec::square()
    };
    let spec = DefectSpec {
        kind: DefectKind::Block,
        defects: vec![Defect::Block { y: 40, x: 40, height: 12, width: 12 }],
    };
    let s = generate(&mesh, &spec).unwrap();
    unsafe {
        let img = image(&s.image);
        let mut cfg = ptr::null_mut();
        assert_eq!(dw_config_new(DwMeshType::Square, &mut cfg), DwStatus::Ok);
        let mut det = ptr::null_mut();
        assert_eq!(dw_detect(img, cfg, &mut det), DwStatus::Ok);

        let mut defect = ptr::null_mut();
        assert_eq!(dw_detection_mask(det, DwMaskKind::Defect, &mut defect), DwStatus::Ok);
        let gt: Vec<u8> = s.gt_block.data().iter().map(|&b| b as u8).collect();
        let mut gt_h = ptr::null_mut();
        assert_eq!(dw_mask_new(96, 96, gt.as_ptr(), &mut gt_h), DwStatus::Ok);
        let mut m = DwMetrics::default();
        assert_eq!(dw_metrics(defect, gt_h, 1.0, &mut m), DwStatus::Ok);
        assert!(m.f >= 0.75, "f = {}", m.f);
        assert_eq!(m.tp + m.fp + m.tn + m.fn_, 96 * 96);
        assert_eq!(dw_mask_count(defect) as u64, m.tp + m.fp);

        let (mut t1, mut t2, mut it) = (0.0, 0.0, 0);
        assert_eq!(dw_detection_stats(det, &mut t1, &mut t2, &mut it), DwStatus::Ok);
        assert!(t1 < 0.0 && t2 > 0.0 && (1..=10).contains(&it));

        let mut e = ptr::null_mut();
        assert_eq!(dw_detection_sparse(det, &mut e), DwStatus::Ok);
        let mut buf = vec![0.0; 96 * 96];
        assert_eq!(dw_image_read(e, buf.as_mut_ptr(), buf.len()), DwStatus::Ok);
        assert!(buf[46 * 96 + 46] > t2);

        dw_image_free(e);
        dw_mask_free(gt_h);
        dw_mask_free(defect);
        dw_detection_free(det);
        dw_config_free(cfg);
        dw_image_free(img);
    }
}

#[test]
fn solve_returns_requested_components() {
    let s = generate(&MeshSpec { image_size: 64, ..MeshSpec::square() }, &DefectSpec::clean()).unwrap();
    unsafe {
        let img = image(&s.image);
        let mut cfg = ptr::null_mut();
        dw_config_new(DwMeshType::Square, &mut cfg);
        let (mut l, mut n, mut it) = (ptr::null_mut(), ptr::null_mut(), 0usize);
        assert_eq!(dw_solve(img, cfg, &mut l, ptr::null_mut(), &mut n, &mut it), DwStatus::Ok);
        assert!(!l.is_null() && !n.is_null() && it > 0);
        let (mut h, mut w) = (0, 0);
        assert_eq!(dw_image_dims(l, &mut h, &mut w), DwStatus::Ok);
        assert_eq!((h, w), (64, 64));
        dw_image_free(l);
        dw_image_free(n);
        dw_config_free(cfg);
        dw_image_free(img);
    }
}

#[test]
fn config_set_and_json() {
    unsafe {
        let mut cfg = ptr::null_mut();
        let doc = CString::new("mesh_type = \"circular\"\nw_min = 0.2").unwrap();
        assert_eq!(dw_config_from_toml(doc.as_ptr(), &mut cfg), DwStatus::Ok);
        let (k, v) = (CString::new("lambda").unwrap(), CString::new("0.09").unwrap());
        assert_eq!(dw_config_set(cfg, k.as_ptr(), v.as_ptr()), DwStatus::Ok);
        let js = dw_config_json(cfg);
        let text = CStr::from_ptr(js).to_str().unwrap().to_owned();
        dw_string_free(js);
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["lambda"], 0.09);
        assert_eq!(parsed["beta"], 0.004);
        assert_eq!(parsed["w_min"], 0.2);

        let bad = CString::new("lamda").unwrap();
        assert_eq!(dw_config_set(cfg, bad.as_ptr(), v.as_ptr()), DwStatus::Config);
        assert!(last_error().contains("lamda"));
        let neg = CString::new("-1").unwrap();
        let wmin = CString::new("w_min").unwrap();
        assert_ne!(dw_config_set(cfg, wmin.as_ptr(), neg.as_ptr()), DwStatus::Ok);
        // a failed set leaves the handle unchanged
        let js = dw_config_json(cfg);
        assert!(CStr::from_ptr(js).to_str().unwrap().contains("\"w_min\":0.2"));
        dw_string_free(js);
        dw_config_free(cfg);
    }
}

#[test]
fn errors_and_null_handles() {
    unsafe {
        let mut img = ptr::null_mut();
        let path = CString::new("/nonexistent/x.png").unwrap();
        assert_eq!(dw_image_load(path.as_ptr(), &mut img), DwStatus::Io);
        assert!(last_error().contains("/nonexistent/x.png"));
        assert!(img.is_null());

        assert_eq!(dw_image_load(ptr::null(), &mut img), DwStatus::NullPointer);
        let mut det = ptr::null_mut();
        assert_eq!(dw_detect(ptr::null(), ptr::null(), &mut det), DwStatus::NullPointer);
        let mut h = ptr::null_mut();
        assert_eq!(dw_image_new(0, 4, [0.0f64; 1].as_ptr(), &mut h), DwStatus::InvalidArgument);

        let a: Vec<u8> = vec![1; 4];
        let b: Vec<u8> = vec![1; 6];
        let (mut ma, mut mb) = (ptr::null_mut(), ptr::null_mut());
        dw_mask_new(2, 2, a.as_ptr(), &mut ma);
        dw_mask_new(2, 3, b.as_ptr(), &mut mb);
        let mut m = DwMetrics::default();
        assert_eq!(dw_metrics(ma, mb, 1.0, &mut m), DwStatus::DimensionMismatch);
        let mut small = [0u8; 2];
        assert_eq!(dw_mask_read(ma, small.as_mut_ptr(), small.len()), DwStatus::InvalidArgument);
        assert_eq!(mask_bytes(ma), vec![1, 1, 1, 1]);
        dw_mask_free(ma);
        dw_mask_free(mb);

        // freeing null is a no-op
        dw_image_free(ptr::null_mut());
        dw_mask_free(ptr::null_mut());
        dw_detection_free(ptr::null_mut());
        dw_config_free(ptr::null_mut());
        dw_string_free(ptr::null_mut());
        assert_eq!(dw_mask_count(ptr::null()), 0);
        assert!(dw_config_json(ptr::null()).is_null());
    }
}

#[test]
fn optics_and_scan_plan() {
    unsafe {
        let mut spec = std::mem::zeroed::<DwOpticsSpec>();
        assert_eq!(dw_optics_default(&mut spec), DwStatus::Ok);
        let mut r = DwOpticsReport::default();
        assert_eq!(dw_optics(&spec, &mut r), DwStatus::Ok);
        assert!((r.optical_magnification - 2.52).abs() < 0.005);
        spec.f_relay = 0.0;
        assert_eq!(dw_optics(&spec, &mut r), DwStatus::InvalidArgument);

        let mut s = DwScanSummary::default();
        let mut xy = vec![0.0; 50];
        assert_eq!(dw_scan_plan(2000.0, 2000.0, 500.0, 800.0, 2.0, &mut s, xy.as_mut_ptr(), xy.len()), DwStatus::Ok);
        assert_eq!((s.nodes, s.overlap_um, s.total_dwell_s), (25, 300.0, 50.0));
        assert_eq!(&xy[8..12], &[2000.0, 0.0, 2000.0, 500.0]);
        assert_eq!(
            dw_scan_plan(2000.0, 2000.0, 800.0, 800.0, 2.0, &mut s, ptr::null_mut(), 0),
            DwStatus::InvalidArgument
        );
        assert!(last_error().contains("no redundancy"));
        assert!(!CStr::from_ptr(dw_version()).to_str().unwrap().is_empty());
    }
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let dir = tempfile::tempdir().unwrap();
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "dwrpca.h"
int main(void) {
    DwOpticsSpec spec;
    DwOpticsReport r;
    if (dw_optics_default(&spec) != DW_STATUS_OK) return 1;
    if (dw_optics(&spec, &r) != DW_STATUS_OK) return 2;
    printf("%.2f\n", r.optical_magnification);
    DwImage *img = NULL;
    if (dw_image_load("/nonexistent.png", &img) != DW_STATUS_IO) return 3;
    if (strstr(dw_last_error(), "nonexistent") == NULL) return 4;
    DwConfig *cfg = NULL;
    if (dw_config_new(DW_MESH_TYPE_CIRCULAR, &cfg) != DW_STATUS_OK) return 5;
    char *js = dw_config_json(cfg);
    if (strstr(js, "circular") == NULL) return 6;
    dw_string_free(js);
    dw_config_free(cfg);
    return 0;
}
"#,
    )
    .unwrap();
    let lib = target_dir().join("libdwrpca_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let exe = dir.path().join("main");
    let cc = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&header)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .expect("C compiler available");
    assert!(cc.status.success(), "{}", String::from_utf8_lossy(&cc.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "2.52");
}
