use std::ffi::CString;
use std::ptr;

use attn_guide_ffi::*;

const TINY: &str = r#"{"base_channels": 4, "stages": 2, "blocks_per_stage": 1}"#;

fn last_error() -> String {
    unsafe {
        let n = ag_last_error(ptr::null_mut(), 0);
        let mut buf = vec![0u8; n + 1];
        ag_last_error(buf.as_mut_ptr() as *mut _, buf.len());
        String::from_utf8(buf[..n].to_vec()).unwrap()
    }
}

fn tiny_model() -> *mut AgModel {
    let json = CString::new(TINY).unwrap();
    let mut m = ptr::null_mut();
    let st = unsafe { ag_model_new(json.as_ptr(), 2, 64, 3, &mut m) };
    assert_eq!(st, AgStatus::AgOk, "{}", last_error());
    m
}

#[test]
fn predict_gives_distributions() {
    let m = tiny_model();
    unsafe {
        assert_eq!(ag_model_classes(m), 2);
        assert_eq!(ag_model_input_size(m), 64);
        let pixels: Vec<f32> = (0..3 * 48 * 48).map(|i| (i % 13) as f32 / 13.0).collect();
        let mut probs = vec![0f32; 6];
        assert_eq!(
            ag_model_predict(m, pixels.as_ptr(), 3, 48, 48, probs.as_mut_ptr()),
            AgStatus::AgOk
        );
        for p in probs.chunks(2) {
            assert!((p[0] + p[1] - 1.0).abs() < 1e-5);
        }
        let mut maps = vec![0f32; 2 * 64 * 64];
        assert_eq!(
            ag_model_attention(m, pixels.as_ptr(), 48, 48, maps.as_mut_ptr()),
            AgStatus::AgOk
        );
        for slice in maps.chunks(64 * 64) {
            assert!((slice.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-4);
        }
        ag_model_free(m);
    }
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("w.agwt").to_str().unwrap()).unwrap();
    let json = CString::new(TINY).unwrap();
    let m = tiny_model();
    let pixels = vec![0.25f32; 64 * 64];
    unsafe {
        assert_eq!(ag_model_save(m, path.as_ptr()), AgStatus::AgOk);
        let mut back = ptr::null_mut();
        assert_eq!(
            ag_model_load(path.as_ptr(), json.as_ptr(), 2, 64, &mut back),
            AgStatus::AgOk
        );
        let (mut a, mut b) = ([0f32; 2], [0f32; 2]);
        ag_model_predict(m, pixels.as_ptr(), 1, 64, 64, a.as_mut_ptr());
        ag_model_predict(back, pixels.as_ptr(), 1, 64, 64, b.as_mut_ptr());
        assert_eq!(a, b);

        let mut wrong = ptr::null_mut();
        assert_eq!(
            ag_model_load(path.as_ptr(), ptr::null(), 2, 64, &mut wrong),
            AgStatus::AgErrLoad
        );
        assert!(wrong.is_null());
        ag_model_free(m);
        ag_model_free(back);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut m = ptr::null_mut();
        let bad = CString::new(r#"{"stages": "three"}"#).unwrap();
        assert_eq!(
            ag_model_new(bad.as_ptr(), 2, 64, 0, &mut m),
            AgStatus::AgErrConfig
        );
        assert!(last_error().contains("backbone_json"));
        assert_eq!(
            ag_model_new(ptr::null(), 2, 64, 0, ptr::null_mut()),
            AgStatus::AgErrNull
        );
        assert_eq!(
            ag_model_predict(ptr::null(), ptr::null(), 1, 1, 1, ptr::null_mut()),
            AgStatus::AgErrNull
        );
        let empty = [0u8; 16];
        let mut out = [0u8; 16];
        assert_eq!(
            ag_mask_to_bbox(empty.as_ptr(), 4, 4, out.as_mut_ptr()),
            AgStatus::AgErrContract
        );
        assert_eq!(ag_model_classes(ptr::null()), 0);
        ag_model_free(ptr::null_mut());
    }
}

#[test]
fn last_error_truncates() {
    unsafe {
        ag_model_new(ptr::null(), 2, 64, 0, ptr::null_mut());
        let full = ag_last_error(ptr::null_mut(), 0);
        let mut buf = [0x7fu8; 4];
        assert_eq!(ag_last_error(buf.as_mut_ptr() as *mut _, 4), full);
        assert_eq!(buf[3], 0);
    }
}

#[test]
fn converters_and_guidance() {
    let (h, w) = (6, 8);
    let mut mask = vec![0u8; h * w];
    for r in 1..5 {
        for c in 2..7 {
            mask[r * w + c] = 255;
        }
    }
    let mut bbox = vec![0u8; h * w];
    let mut scribble = vec![0u8; h * w];
    unsafe {
        assert_eq!(
            ag_mask_to_bbox(mask.as_ptr(), h, w, bbox.as_mut_ptr()),
            AgStatus::AgOk
        );
        assert_eq!(
            ag_mask_to_scribble(mask.as_ptr(), h, w, 1, scribble.as_mut_ptr()),
            AgStatus::AgOk
        );
    }
    for i in 0..h * w {
        assert_eq!(bbox[i], (mask[i] != 0) as u8);
        assert!(scribble[i] <= bbox[i]);
    }
    assert!(scribble.contains(&1));

    // uniform attention over the 20 annotated pixels reaches λ ln 20
    let n = 20.0;
    let target: Vec<f64> = (0..2)
        .flat_map(|_| mask.iter().map(|&v| if v != 0 { 1.0 / n } else { 0.0 }))
        .collect();
    let mut g = 0.0;
    let st = unsafe { ag_guidance_term(target.as_ptr(), 2, h, w, mask.as_ptr(), 2.0, &mut g) };
    assert_eq!(st, AgStatus::AgOk);
    assert!((g - 2.0 * n.ln()).abs() < 1e-12);
}

#[test]
fn header_declares_every_entry_point() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/attn_guide.h"))
            .unwrap();
    for f in [
        "ag_last_error",
        "ag_model_new",
        "ag_model_load",
        "ag_model_save",
        "ag_model_free",
        "ag_model_predict",
        "ag_model_attention",
        "ag_guidance_term",
        "ag_mask_to_bbox",
        "ag_mask_to_scribble",
        "AG_OK",
        "typedef struct AgModel AgModel",
    ] {
        assert!(header.contains(f), "{f} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/attn_guide.h");
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .status()
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    assert!(status.success());
}
