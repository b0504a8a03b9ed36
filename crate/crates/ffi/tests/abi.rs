use std::ffi::{CStr, CString};
use std::ptr;

use mclnn::config::ExperimentConfig;
use mclnn::mask::generate_mask;
use mclnn::{FrameBlock, MaskSpec, Matrix, TrainedModel};
use mclnn_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(mclnn_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn build(preset: &str, classes: usize, seed: u64) -> *mut MclnnModel {
    let name = CString::new(preset).unwrap();
    let mut model = ptr::null_mut();
    let status = unsafe { mclnn_model_build_preset(name.as_ptr(), classes, seed, &mut model) };
    assert_eq!(status, MclnnStatus::Ok, "{}", last_error());
    model
}

fn ramp(len: usize) -> Vec<f64> {
    (0..len).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect()
}

#[test]
fn segment_size_of_layer_orders() {
    let orders = [4usize, 4, 4];
    assert_eq!(unsafe { mclnn_segment_size(orders.as_ptr(), 3, 5) }, 29);
    assert_eq!(unsafe { mclnn_segment_size(ptr::null(), 0, 7) }, 7);
    assert_eq!(unsafe { mclnn_segment_size(ptr::null(), 2, 7) }, 0);
}

#[test]
fn mask_matches_library_row_major() {
    let mut mask = ptr::null_mut();
    assert_eq!(unsafe { mclnn_mask_generate(12, 9, 3, -1, &mut mask) }, MclnnStatus::Ok);
    let (rows, cols) = unsafe { (mclnn_mask_rows(mask), mclnn_mask_cols(mask)) };
    assert_eq!((rows, cols), (12, 9));
    let mut bytes = vec![9u8; rows * cols];
    assert_eq!(
        unsafe { mclnn_mask_copy(mask, bytes.as_mut_ptr(), bytes.len()) },
        MclnnStatus::Ok
    );
    let reference = generate_mask(&MaskSpec::new(12, 9, 3, -1).unwrap());
    for r in 0..rows {
        for c in 0..cols {
            assert_eq!(bytes[r * cols + c], u8::from(reference.get(r, c)), "cell ({r}, {c})");
        }
    }
    let mut short = vec![0u8; 5];
    assert_eq!(
        unsafe { mclnn_mask_copy(mask, short.as_mut_ptr(), short.len()) },
        MclnnStatus::Shape
    );
    unsafe { mclnn_mask_free(mask) };
}

#[test]
fn invalid_mask_reports_argument_error() {
    let mut mask = ptr::null_mut();
    assert_eq!(
        unsafe { mclnn_mask_generate(4, 3, 2, 2, &mut mask) },
        MclnnStatus::InvalidArgument
    );
    assert!(mask.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(
        unsafe { mclnn_mask_generate(4, 3, 2, 0, ptr::null_mut()) },
        MclnnStatus::NullPointer
    );
}

#[test]
fn forward_matches_library() {
    let model = build("gradcheck", 4, 21);
    let (q, l) = unsafe { (mclnn_model_segment_size(model), mclnn_model_feature_length(model)) };
    assert_eq!(unsafe { mclnn_model_class_count(model) }, 4);
    let segment = ramp(q * l);
    let mut probs = [0.0f64; 4];
    let status = unsafe { mclnn_model_forward(model, segment.as_ptr(), segment.len(), probs.as_mut_ptr(), 4) };
    assert_eq!(status, MclnnStatus::Ok, "{}", last_error());

    let spec = ExperimentConfig::preset("gradcheck").unwrap().model_spec(4).unwrap();
    let reference = TrainedModel::build(&spec, 21).unwrap();
    let block = FrameBlock::new(Matrix::from_vec(q, l, segment).unwrap()).unwrap();
    assert_eq!(probs.to_vec(), reference.forward(&block).unwrap());
    unsafe { mclnn_model_free(model) };
}

#[test]
fn forward_rejects_wrong_sizes() {
    let model = build("gradcheck", 3, 1);
    let segment = [0.5; 7];
    let mut probs = [0.0f64; 3];
    let status = unsafe { mclnn_model_forward(model, segment.as_ptr(), segment.len(), probs.as_mut_ptr(), 3) };
    assert_eq!(status, MclnnStatus::Shape);
    assert!(last_error().contains("segment"));

    let (q, l) = unsafe { (mclnn_model_segment_size(model), mclnn_model_feature_length(model)) };
    let segment = ramp(q * l);
    let status = unsafe { mclnn_model_forward(model, segment.as_ptr(), segment.len(), probs.as_mut_ptr(), 2) };
    assert_eq!(status, MclnnStatus::Shape);
    let status = unsafe { mclnn_model_forward(model, segment.as_ptr(), segment.len(), ptr::null_mut(), 3) };
    assert_eq!(status, MclnnStatus::NullPointer);
    unsafe { mclnn_model_free(model) };
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.bin").to_str().unwrap()).unwrap();
    let model = build("small", 2, 3);
    assert_eq!(unsafe { mclnn_model_save(model, path.as_ptr()) }, MclnnStatus::Ok);

    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { mclnn_model_load(path.as_ptr(), &mut loaded) }, MclnnStatus::Ok);
    let (q, l) = unsafe { (mclnn_model_segment_size(loaded), mclnn_model_feature_length(loaded)) };
    assert_eq!(
        unsafe { (mclnn_model_segment_size(model), mclnn_model_feature_length(model)) },
        (q, l)
    );
    let segment = ramp(q * l);
    let (mut a, mut b) = ([0.0f64; 2], [0.0f64; 2]);
    unsafe {
        assert_eq!(
            mclnn_model_forward(model, segment.as_ptr(), segment.len(), a.as_mut_ptr(), 2),
            MclnnStatus::Ok
        );
        assert_eq!(
            mclnn_model_forward(loaded, segment.as_ptr(), segment.len(), b.as_mut_ptr(), 2),
            MclnnStatus::Ok
        );
        mclnn_model_free(model);
        mclnn_model_free(loaded);
    }
    assert_eq!(a, b);
}

#[test]
fn load_failures_are_classified() {
    let dir = tempfile::tempdir().unwrap();
    let mut out = ptr::null_mut();
    let missing = CString::new(dir.path().join("none.bin").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { mclnn_model_load(missing.as_ptr(), &mut out) }, MclnnStatus::Io);
    let junk_path = dir.path().join("junk.bin");
    std::fs::write(&junk_path, b"junk").unwrap();
    let junk = CString::new(junk_path.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { mclnn_model_load(junk.as_ptr(), &mut out) },
        MclnnStatus::Format
    );
    assert!(out.is_null());
    assert_eq!(
        unsafe { mclnn_model_load(ptr::null(), &mut out) },
        MclnnStatus::NullPointer
    );
}

#[test]
fn unknown_preset_and_null_handles() {
    let name = CString::new("nope").unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { mclnn_model_build_preset(name.as_ptr(), 2, 0, &mut model) },
        MclnnStatus::InvalidArgument
    );
    assert!(last_error().contains("nope"));
    unsafe {
        assert_eq!(mclnn_model_segment_size(ptr::null()), 0);
        assert_eq!(mclnn_mask_rows(ptr::null()), 0);
        mclnn_model_free(ptr::null_mut());
        mclnn_mask_free(ptr::null_mut());
    }
}

#[test]
fn success_clears_last_error() {
    let mut mask = ptr::null_mut();
    unsafe { mclnn_mask_generate(0, 3, 1, 0, &mut mask) };
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { mclnn_mask_generate(3, 3, 1, 0, &mut mask) }, MclnnStatus::Ok);
    assert_eq!(last_error(), "");
    unsafe { mclnn_mask_free(mask) };
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/mclnn.h");
    for f in [
        "mclnn_last_error",
        "mclnn_segment_size",
        "mclnn_mask_generate",
        "mclnn_mask_copy",
        "mclnn_model_build_preset",
        "mclnn_model_forward",
        "mclnn_model_free",
        "MCLNN_STATUS_SHAPE",
    ] {
        assert!(header.contains(f), "{f} missing from header");
    }
}
