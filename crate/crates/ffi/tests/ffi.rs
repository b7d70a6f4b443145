use std::ffi::{CStr, CString};
use std::ptr;

use sonotag::nnet::{checkpoint, Network};
use sonotag_ffi::*;

fn sine(seconds: f64, freq: f64) -> Vec<f64> {
    let n = (seconds * 44_100.0) as usize;
    (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / 44_100.0).sin())
        .collect()
}

fn spectrogram(samples: &[f64], log: bool) -> *mut SntSpectrogram {
    let mut spec = ptr::null_mut();
    let st = unsafe { snt_spectrogram_from_samples(samples.as_ptr(), samples.len(), 44_100, log as i32, &mut spec) };
    assert_eq!(st, SntStatus::Ok);
    spec
}

fn last_error() -> String {
    let p = snt_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn spectrogram_shape_and_values() {
    let spec = spectrogram(&sine(10.0, 1_000.0), false);
    let (mut rows, mut cols) = (0, 0);
    unsafe {
        assert_eq!(snt_spectrogram_shape(spec, &mut rows, &mut cols), SntStatus::Ok);
        assert_eq!((rows, cols), (256, 624));
        let mut buf = vec![0.0; rows * cols];
        assert_eq!(snt_spectrogram_values(spec, buf.as_mut_ptr(), buf.len()), SntStatus::Ok);
        assert!(buf.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert_eq!(
            snt_spectrogram_values(spec, buf.as_mut_ptr(), 3),
            SntStatus::InvalidArgument
        );
        snt_spectrogram_free(spec);
    }
}

#[test]
fn errors_are_reported() {
    let mut spec = ptr::null_mut();
    let short = [0.0; 10];
    unsafe {
        assert_eq!(
            snt_spectrogram_from_samples(short.as_ptr(), short.len(), 44_100, 0, &mut spec),
            SntStatus::InvalidArgument
        );
        assert!(spec.is_null());
        assert!(last_error().contains("window"));
        assert_eq!(
            snt_spectrogram_from_samples(ptr::null(), 5, 44_100, 0, &mut spec),
            SntStatus::NullPointer
        );
        let missing = CString::new("/nonexistent/file.wav").unwrap();
        assert_eq!(snt_spectrogram_from_wav(missing.as_ptr(), 0, &mut spec), SntStatus::Io);
        assert_eq!(snt_box_list_len(ptr::null()), 0);
        snt_spectrogram_free(ptr::null_mut());
        snt_mask_free(ptr::null_mut());
        snt_box_list_free(ptr::null_mut());
        snt_model_free(ptr::null_mut());
        snt_string_free(ptr::null_mut());
    }
    assert!(!unsafe { CStr::from_ptr(snt_version()) }.to_bytes().is_empty());
}

#[test]
fn segment_tone_burst() {
    let mut samples = vec![0.0; 441_000];
    let mut noise = 12345u64;
    for (i, s) in samples.iter_mut().enumerate() {
        noise = noise.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        *s = ((noise >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.02;
        if (100_000..140_000).contains(&i) {
            *s += 0.5 * (2.0 * std::f64::consts::PI * 3_000.0 * i as f64 / 44_100.0).sin();
        }
    }
    let spec = spectrogram(&samples, false);
    let params = snt_seg_params_default();
    assert_eq!(params.dilate_size, 3);
    let (mut mask, mut boxes) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(snt_segment(spec, &params, &mut mask, &mut boxes), SntStatus::Ok);
        assert_eq!(snt_box_list_len(boxes), 1);
        let mut b = SntBox { t0: 0, t1: 0, f0: 0, f1: 0 };
        assert_eq!(snt_box_list_get(boxes, 0, &mut b), SntStatus::Ok);
        // 3 kHz is bin 34.8 at 86.13 Hz per bin
        assert!(b.f0 <= 35 && b.f1 >= 35);
        assert_eq!(snt_box_list_get(boxes, 1, &mut b), SntStatus::InvalidArgument);
        let (mut rows, mut cols) = (0, 0);
        assert_eq!(snt_mask_shape(mask, &mut rows, &mut cols), SntStatus::Ok);
        let mut bits = vec![0u8; rows * cols];
        assert_eq!(snt_mask_bits(mask, bits.as_mut_ptr(), bits.len()), SntStatus::Ok);
        assert!(bits.contains(&1));
        let mut dice = 0.0;
        assert_eq!(snt_mask_dice(mask, mask, &mut dice), SntStatus::Ok);
        assert_eq!(dice, 1.0);
        snt_mask_free(mask);
        snt_box_list_free(boxes);
        // log spectrograms are rejected by median clipping
        let log_spec = spectrogram(&samples, true);
        assert_eq!(
            snt_segment(log_spec, ptr::null(), ptr::null_mut(), ptr::null_mut()),
            SntStatus::InvalidArgument
        );
        snt_spectrogram_free(log_spec);
        snt_spectrogram_free(spec);
    }
}

#[test]
fn metrics_and_yolo() {
    let a = SntBox { t0: 0, t1: 9, f0: 0, f1: 9 };
    let b = SntBox { t0: 5, t1: 14, f0: 0, f1: 9 };
    let mut v = 0.0;
    unsafe {
        assert_eq!(snt_iou(&a, &b, &mut v), SntStatus::Ok);
        assert_eq!(v, 50.0 / 150.0);
        let bad = SntBox { t0: 3, t1: 1, f0: 0, f1: 0 };
        assert_eq!(snt_iou(&a, &bad, &mut v), SntStatus::InvalidArgument);
        let labels = [0u8, 0, 1, 1];
        let scores = [0.1, 0.4, 0.35, 0.8];
        assert_eq!(snt_roc_auc(labels.as_ptr(), scores.as_ptr(), 4, &mut v), SntStatus::Ok);
        assert_eq!(v, 0.75);
        let worked = [SntBox { t0: 100, t1: 199, f0: 156, f1: 205 }];
        let mut text = ptr::null_mut();
        assert_eq!(snt_export_yolo(worked.as_ptr(), 1, 624, 256, &mut text), SntStatus::Ok);
        assert_eq!(
            CStr::from_ptr(text).to_str().unwrap(),
            "0 0.240385 0.292969 0.160256 0.195313\n"
        );
        snt_string_free(text);
        let outside = [SntBox { t0: 0, t1: 700, f0: 0, f1: 1 }];
        assert_eq!(
            snt_export_yolo(outside.as_ptr(), 1, 624, 256, &mut text),
            SntStatus::InvalidArgument
        );
    }
}

#[test]
fn models_through_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let unet_path = dir.path().join("unet.ckpt");
    let clf_path = dir.path().join("clf.ckpt");
    checkpoint::save(&Network::toy_unet(64, 1).unwrap(), &unet_path).unwrap();
    checkpoint::save(&Network::toy_classifier(64, 1).unwrap(), &clf_path).unwrap();
    let spec = spectrogram(&sine(10.0, 2_000.0), false);
    let load = |p: &std::path::Path| {
        let c = CString::new(p.to_str().unwrap()).unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(unsafe { snt_model_load(c.as_ptr(), &mut m) }, SntStatus::Ok);
        m
    };
    let (unet, clf) = (load(&unet_path), load(&clf_path));
    unsafe {
        let mut topo = SntTopology::Classifier;
        assert_eq!(snt_model_topology(unet, &mut topo), SntStatus::Ok);
        assert_eq!(topo, SntTopology::Unet);
        let mut mask = ptr::null_mut();
        assert_eq!(snt_predict_mask(unet, spec, 0.5, &mut mask), SntStatus::Ok);
        let (mut rows, mut cols) = (0, 0);
        snt_mask_shape(mask, &mut rows, &mut cols);
        assert_eq!((rows, cols), (256, 624));
        snt_mask_free(mask);
        assert_eq!(snt_predict_mask(clf, spec, 0.5, &mut mask), SntStatus::Topology);
        let mut p = -1.0;
        assert_eq!(snt_predict_probability(clf, spec, &mut p), SntStatus::Ok);
        assert!((0.0..=1.0).contains(&p));
        let mut boxes = ptr::null_mut();
        for kind in [SntAttention::GradCam, SntAttention::GuidedBackprop] {
            assert_eq!(snt_attention_boxes(clf, spec, kind, 0.5, 1, &mut boxes), SntStatus::Ok);
            snt_box_list_free(boxes);
        }
        assert_eq!(
            snt_attention_boxes(unet, spec, SntAttention::GradCam, 0.5, 1, &mut boxes),
            SntStatus::Topology
        );
        snt_model_free(unet);
        snt_model_free(clf);
        let garbage = dir.path().join("garbage.ckpt");
        std::fs::write(&garbage, b"not a checkpoint").unwrap();
        let c = CString::new(garbage.to_str().unwrap()).unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(snt_model_load(c.as_ptr(), &mut m), SntStatus::Format);
        snt_spectrogram_free(spec);
    }
}

#[test]
fn header_is_generated() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/sonotag.h")).unwrap();
    for name in [
        "snt_spectrogram_from_wav",
        "snt_segment",
        "snt_predict_mask",
        "snt_export_yolo",
        "snt_last_error",
        "typedef struct SntModel SntModel",
        "SNT_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
