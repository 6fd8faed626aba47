use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use thermalign::model::checkpoint::TensorSelection;
use thermalign::model::{Checkpoint, ModelConfig, ToyVlm, Vocabulary};
use thermalign_ffi::*;

fn small_config() -> ModelConfig {
    ModelConfig {
        image_size: 16,
        patch_size: 8,
        vision_dim: 8,
        vision_heads: 2,
        vision_blocks: 1,
        projector_hidden: 8,
        lm_dim: 16,
        lm_heads: 2,
        lm_blocks: 1,
        mlp_ratio: 2,
        max_seq_len: 96,
    }
}

fn saved_model(dir: &std::path::Path) -> (ToyVlm, CString) {
    let mut m = ToyVlm::new(small_config(), Vocabulary::default(), 11).unwrap();
    m.freeze_backbones();
    let path = dir.join("model.ckpt");
    Checkpoint::from_model(&m, TensorSelection::All).save(&path).unwrap();
    (m, CString::new(path.to_str().unwrap()).unwrap())
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ta_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn load_answer_and_free() {
    let dir = tempfile::tempdir().unwrap();
    let (model, path) = saved_model(dir.path());
    let mut handle: *mut TaModel = ptr::null_mut();
    assert_eq!(unsafe { ta_model_load(path.as_ptr(), &mut handle) }, TaStatus::Ok);
    assert!(!handle.is_null());

    let pixels: Vec<f64> = (0..256).map(|i| (i % 7) as f64 / 7.0).collect();
    let mut buf = vec![0 as std::ffi::c_char; 128];
    let mut written = 0usize;
    let status = unsafe {
        ta_model_answer(handle, pixels.as_ptr(), 16, 16, 1, TaPromptMode::OpenSet, 6, buf.as_mut_ptr(), buf.len(), &mut written)
    };
    assert_eq!(status, TaStatus::Ok, "{}", last_error());
    let text = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string();
    assert_eq!(text.len(), written);

    let image = thermalign::model::ImageInput::Gray(ndarray::Array2::from_shape_vec((16, 16), pixels.clone()).unwrap());
    let user = format!("<image>\n{}", thermalign::evalkit::prompt::OPEN_SET_PROMPT);
    assert_eq!(text, model.answer(&image, &user, 6).unwrap());

    let mut part = TaPartition { trained_params: 0, total_params: 0, trained_percent: 0.0, trained_tensors: 0, frozen_tensors: 0 };
    assert_eq!(unsafe { ta_model_partition(handle, &mut part) }, TaStatus::Ok);
    let expected = thermalign::model::PartitionReport::of(&model);
    assert_eq!(part.trained_params as usize, expected.trained_params);
    assert_eq!(part.frozen_tensors as usize, expected.frozen_tensors);

    unsafe { ta_model_free(handle) };
    unsafe { ta_model_free(ptr::null_mut()) };
}

#[test]
fn small_buffer_reports_needed_length() {
    let dir = tempfile::tempdir().unwrap();
    let (_, path) = saved_model(dir.path());
    let mut handle: *mut TaModel = ptr::null_mut();
    assert_eq!(unsafe { ta_model_load(path.as_ptr(), &mut handle) }, TaStatus::Ok);
    let pixels = vec![0.5; 16 * 16 * 3];
    let mut written = 0usize;
    let status = unsafe {
        ta_model_answer(handle, pixels.as_ptr(), 16, 16, 3, TaPromptMode::ClosedSet, 6, ptr::null_mut(), 0, &mut written)
    };
    assert_eq!(status, TaStatus::BufferTooSmall);
    let mut buf = vec![0 as std::ffi::c_char; written + 1];
    let status = unsafe {
        ta_model_answer(handle, pixels.as_ptr(), 16, 16, 3, TaPromptMode::ClosedSet, 6, buf.as_mut_ptr(), buf.len(), &mut written)
    };
    assert_eq!(status, TaStatus::Ok);
    unsafe { ta_model_free(handle) };
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut handle: *mut TaModel = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    assert_eq!(unsafe { ta_model_load(missing.as_ptr(), &mut handle) }, TaStatus::Io);
    assert!(last_error().contains("/nonexistent/model.ckpt"));
    assert!(handle.is_null());

    assert_eq!(unsafe { ta_model_load(ptr::null(), &mut handle) }, TaStatus::NullPointer);
    assert_eq!(last_error(), "path is null");

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ta_model_load(junk.as_ptr(), &mut handle) }, TaStatus::Checkpoint);

    let mut lr = 0.0;
    assert_eq!(unsafe { ta_lr_at(1001, 1e-4, 0.03, 1000, &mut lr) }, TaStatus::InvalidArgument);
}

#[test]
fn wrong_channel_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (_, path) = saved_model(dir.path());
    let mut handle: *mut TaModel = ptr::null_mut();
    assert_eq!(unsafe { ta_model_load(path.as_ptr(), &mut handle) }, TaStatus::Ok);
    let pixels = vec![0.0; 16 * 16 * 2];
    let mut buf = [0 as std::ffi::c_char; 32];
    let mut written = 0;
    let status = unsafe {
        ta_model_answer(handle, pixels.as_ptr(), 16, 16, 2, TaPromptMode::OpenSet, 4, buf.as_mut_ptr(), buf.len(), &mut written)
    };
    assert_eq!(status, TaStatus::InvalidArgument);
    let pixels = vec![0.0; 12 * 12];
    let status = unsafe {
        ta_model_answer(handle, pixels.as_ptr(), 12, 12, 1, TaPromptMode::OpenSet, 4, buf.as_mut_ptr(), buf.len(), &mut written)
    };
    assert_eq!(status, TaStatus::Shape);
    unsafe { ta_model_free(handle) };
}

#[test]
fn parser_and_schedule() {
    let mut p = TaPrediction { ok: false, species: 9, count: 9 };
    let text = CString::new("Elephant; 2").unwrap();
    assert_eq!(unsafe { ta_parse_species_count(text.as_ptr(), &mut p) }, TaStatus::Ok);
    assert_eq!(p, TaPrediction { ok: true, species: 2, count: 2 });
    let text = CString::new("zebra; 4").unwrap();
    unsafe { ta_parse_species_count(text.as_ptr(), &mut p) };
    assert_eq!(p, TaPrediction { ok: true, species: -1, count: 4 });
    let text = CString::new("I see some animals").unwrap();
    unsafe { ta_parse_species_count(text.as_ptr(), &mut p) };
    assert!(!p.ok);

    let mut lr = 0.0;
    assert_eq!(unsafe { ta_lr_at(515, 1e-4, 0.03, 1000, &mut lr) }, TaStatus::Ok);
    assert!((lr - 5e-5).abs() < 1e-12);
    let v = unsafe { CStr::from_ptr(ta_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> String {
    std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/thermalign.h")).unwrap()
}

#[test]
fn generated_header_declares_the_api() {
    let h = header();
    for name in [
        "typedef struct TaModel TaModel;",
        "ta_model_load",
        "ta_model_apply",
        "ta_model_free",
        "ta_model_answer",
        "ta_model_partition",
        "ta_parse_species_count",
        "ta_lr_at",
        "ta_last_error",
        "TA_STATUS_BUFFER_TOO_SMALL",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

/// Compiles a C program against the header and the static library.
#[test]
fn c_program_links_against_the_static_library() {
    let Ok(cc) = Command::new("cc").arg("--version").output() else { return };
    if !cc.status.success() {
        return;
    }
    // The test harness only builds the rlib, so build the static library
    // into a private target directory.
    let target = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("c-abi");
    let build = Command::new(env!("CARGO"))
        .args(["build", "--quiet", "--lib", "-p", "thermalign-ffi", "--target-dir"])
        .arg(&target)
        .output()
        .unwrap();
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));
    let lib = target.join("debug").join("libthermalign_ffi.a");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "thermalign.h"
int main(void) {
    TaPrediction p;
    double lr = 0.0;
    TaModel *m = NULL;
    if (ta_parse_species_count("Deer; 1", &p) != TA_STATUS_OK) return 1;
    if (ta_lr_at(30, 1e-4, 0.03, 1000, &lr) != TA_STATUS_OK) return 2;
    TaStatus s = ta_model_load("/nonexistent.ckpt", &m);
    printf("%d %d %u %.6g %d %s\n", p.ok, p.species, p.count, lr, (int)s, m == NULL ? "null" : "set");
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("prog");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new("cc")
        .arg("-std=c99")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success());
    assert_eq!(String::from_utf8_lossy(&run.stdout), "1 0 1 0.0001 3 null\n");
}
