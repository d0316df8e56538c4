use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use pdl::bench::{pipeline_from_model, pooled_covariance, prepare_patches};
use pdl::classifier::train_ovr_svm;
use pdl::datasets::{synthetic_cifar, Split};
use pdl::dictionary::kmeans_spherical;
use pdl::encoder::{EncoderConfig, FeatureExtractor};
use pdl::linalg::RowMatrix;
use pdl::model::{EncoderSettings, ModelFile};
use pdl::nystrom::fit_transform_matrix;
use pdl::selection::{select_k_exemplars, ApParams};
use pdl_ffi::*;

fn last_error() -> String {
    let p = pdl_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn build_model(path: &Path, with_classifier: bool) {
    let train = synthetic_cifar(80, Split::Train, 3);
    let (white, whitener) = prepare_patches(&train, 6, 3000, 0.1, 10.0, 1).unwrap();
    let dict = kmeans_spherical(&white, 16, 5, 2).unwrap();
    let enc = EncoderConfig::default();
    let fx = FeatureExtractor::new(&dict, &whitener, enc, 10.0).unwrap();
    let cov = pooled_covariance(&fx, &train, 500, 4).unwrap();
    let sel = select_k_exemplars(&cov, 5, &ApParams::default(), 40).unwrap();
    let t = fit_transform_matrix(&cov.c, &sel).unwrap();
    let mut f = ModelFile::new();
    f.put(&whitener);
    f.put(&dict);
    f.put(&EncoderSettings {
        encoder: enc,
        bias: 10.0,
    });
    f.put(&sel);
    f.put(&t);
    if with_classifier {
        let (pipeline, _, _) = pipeline_from_model(&f, true).unwrap();
        let x = pipeline.featurize(&train).unwrap();
        f.put(&train_ovr_svm(&x, &train.labels, 1e-3, 50, 0).unwrap());
    }
    f.save(path).unwrap();
}

fn open(path: &Path, rescale: i32) -> (PdlStatus, *mut PdlModel) {
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    let s = unsafe { pdl_model_open(c.as_ptr(), rescale, &mut m) };
    (s, m)
}

#[test]
fn encode_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.bin");
    build_model(&path, true);
    let (status, model) = open(&path, 1);
    assert_eq!(status, PdlStatus::Ok);
    assert!(pdl_last_error_message().is_null());

    let mut len = 0;
    assert_eq!(
        unsafe { pdl_model_feature_len(model, &mut len) },
        PdlStatus::Ok
    );
    assert_eq!(len, 5 * 4);
    let (mut size, mut side, mut ch) = (0, 0, 0);
    assert_eq!(
        unsafe { pdl_model_shape(model, &mut size, &mut side, &mut ch) },
        PdlStatus::Ok
    );
    assert_eq!((size, side, ch), (5, 6, 3));

    let img = &synthetic_cifar(3, Split::Test, 9).images[2];
    let mut out = vec![0.0; len];
    let s =
        unsafe { pdl_model_encode(model, img.pixels.as_ptr(), 32, 32, 3, out.as_mut_ptr(), len) };
    assert_eq!(s, PdlStatus::Ok);
    let f = ModelFile::load(&path).unwrap();
    let (pipeline, _, _) = pipeline_from_model(&f, true).unwrap();
    assert_eq!(out, pipeline.featurize_image(img).unwrap());

    let s = unsafe {
        pdl_model_encode(
            model,
            img.pixels.as_ptr(),
            32,
            32,
            3,
            out.as_mut_ptr(),
            len - 1,
        )
    };
    assert_eq!(s, PdlStatus::DimensionMismatch);
    assert!(last_error().contains("dimension"));

    let mut classes = 0;
    assert_eq!(
        unsafe { pdl_model_num_classes(model, &mut classes) },
        PdlStatus::Ok
    );
    assert_eq!(classes, 10);
    let mut class = usize::MAX;
    let s = unsafe { pdl_model_predict(model, img.pixels.as_ptr(), 32, 32, 3, &mut class) };
    assert_eq!(s, PdlStatus::Ok);
    assert!(class < 10);
    unsafe { pdl_model_free(model) };
}

#[test]
fn open_errors() {
    let (s, m) = open(Path::new("/nonexistent/model.bin"), 1);
    assert_eq!(s, PdlStatus::Io);
    assert!(m.is_null());
    assert!(!last_error().is_empty());

    let tmp = tempfile::tempdir().unwrap();
    let junk = tmp.path().join("junk.bin");
    std::fs::write(&junk, b"not a model").unwrap();
    assert_eq!(open(&junk, 0).0, PdlStatus::Format);

    let empty = tmp.path().join("empty.bin");
    ModelFile::new().save(&empty).unwrap();
    assert_eq!(open(&empty, 0).0, PdlStatus::MissingSection);

    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { pdl_model_open(ptr::null(), 0, &mut m) },
        PdlStatus::NullPointer
    );
    unsafe { pdl_model_free(ptr::null_mut()) };
}

#[test]
fn predict_without_classifier() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.bin");
    build_model(&path, false);
    let (_, model) = open(&path, 0);
    let mut classes = 7;
    unsafe { pdl_model_num_classes(model, &mut classes) };
    assert_eq!(classes, 0);
    let px = vec![100u8; 32 * 32 * 3];
    let mut class = 0;
    let s = unsafe { pdl_model_predict(model, px.as_ptr(), 32, 32, 3, &mut class) };
    assert_eq!(s, PdlStatus::MissingSection);
    let s = unsafe { pdl_model_predict(model, px.as_ptr(), 32, 32, 2, &mut class) };
    assert_eq!(s, PdlStatus::MissingSection);
    unsafe { pdl_model_free(model) };
}

#[test]
fn affinity_propagation_on_two_groups() {
    let pts = [0.0, 0.1, 0.2, 5.0, 5.1, 5.2];
    let n = pts.len();
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            s[i * n + j] = -(pts[i] - pts[j]) * (pts[i] - pts[j]);
        }
    }
    for i in 0..n {
        s[i * n + i] = -1.0;
    }
    let (mut count, mut ex, mut asg) = (0, vec![0; n], vec![0; n]);
    let st = unsafe {
        pdl_affinity_propagation(
            s.as_ptr(),
            n,
            0.9,
            1000,
            50,
            &mut count,
            ex.as_mut_ptr(),
            asg.as_mut_ptr(),
        )
    };
    assert_eq!(st, PdlStatus::Ok);
    assert_eq!(count, 2);
    assert_eq!(&ex[..2], &[1, 4]);
    assert_eq!(asg, vec![1, 1, 1, 4, 4, 4]);

    let st = unsafe {
        pdl_affinity_propagation(
            s.as_ptr(),
            n,
            0.2,
            1000,
            50,
            &mut count,
            ex.as_mut_ptr(),
            asg.as_mut_ptr(),
        )
    };
    assert_eq!(st, PdlStatus::InvalidArgument);
    let st = unsafe {
        pdl_affinity_propagation(
            ptr::null(),
            n,
            0.9,
            1000,
            50,
            &mut count,
            ex.as_mut_ptr(),
            asg.as_mut_ptr(),
        )
    };
    assert_eq!(st, PdlStatus::NullPointer);
}

#[test]
fn select_k_and_similarity() {
    // Two perfectly correlated pairs plus an independent code.
    let c = RowMatrix::from_rows(&[
        vec![1.0, 1.0, 0.0, 0.0, 0.0],
        vec![1.0, 1.0, 0.0, 0.0, 0.0],
        vec![0.0, 0.0, 4.0, 4.0, 0.0],
        vec![0.0, 0.0, 4.0, 4.0, 0.0],
        vec![0.0, 0.0, 0.0, 0.0, 2.0],
    ])
    .unwrap();
    let (mut ex, mut asg) = (vec![0; 3], vec![0; 5]);
    let st = unsafe {
        pdl_select_k(
            c.as_slice().as_ptr(),
            5,
            3,
            ex.as_mut_ptr(),
            asg.as_mut_ptr(),
        )
    };
    assert_eq!(st, PdlStatus::Ok, "{}", last_error());
    assert_eq!(asg[0], asg[1]);
    assert_eq!(asg[2], asg[3]);
    assert_eq!(asg[4], 4);

    let st = unsafe {
        pdl_select_k(
            c.as_slice().as_ptr(),
            5,
            6,
            ex.as_mut_ptr(),
            asg.as_mut_ptr(),
        )
    };
    assert_eq!(st, PdlStatus::InvalidArgument);

    let mut s = vec![0.0; 25];
    let st = unsafe { pdl_similarity(c.as_slice().as_ptr(), 5, -3.0, s.as_mut_ptr()) };
    assert_eq!(st, PdlStatus::Ok);
    assert_eq!(s[1], 0.0);
    assert_eq!(s[2], -2.0);
    assert_eq!(s[0], -3.0);
}

#[test]
fn nystrom_full_subset_is_exact() {
    let c = RowMatrix::from_rows(&[
        vec![2.0, 1.0, 0.5],
        vec![1.0, 2.0, 0.3],
        vec![0.5, 0.3, 1.0],
    ])
    .unwrap();
    let mut out = vec![0.0; 9];
    let idx = [0usize, 1, 2];
    let st = unsafe {
        pdl_nystrom_reconstruct(c.as_slice().as_ptr(), 3, idx.as_ptr(), 3, out.as_mut_ptr())
    };
    assert_eq!(st, PdlStatus::Ok);
    for (a, b) in out.iter().zip(c.as_slice()) {
        assert!((a - b).abs() < 1e-10);
    }
    let bad = [0usize, 7];
    let st = unsafe {
        pdl_nystrom_reconstruct(c.as_slice().as_ptr(), 3, bad.as_ptr(), 2, out.as_mut_ptr())
    };
    assert_ne!(st, PdlStatus::Ok);
    assert!(!last_error().is_empty());
}
