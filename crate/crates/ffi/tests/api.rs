use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use dermclass::dataset::{DiskSource, ImageSource};
use dermclass::model::build_model;
use dermclass::toy::{toy_config, write_toy_dataset};
use dermclass::trainer::Trainer;
use dermclass_ffi::*;

fn last_error() -> String {
    let p = derm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn toy_checkpoint(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let fixtures = write_toy_dataset(dir, 0).unwrap();
    let cfg = toy_config(dir, &fixtures);
    let model = build_model(&cfg.model.backbone, &cfg.model.head, 0).unwrap();
    let source: Arc<dyn ImageSource> = Arc::new(DiskSource::new(224));
    let mut trainer = Trainer::new(model, cfg.train, 0, fixtures[0].manifest.clone(), source).unwrap();
    trainer.run_until(2).unwrap();
    let path = dir.join("model.ckpt");
    trainer.save(&path).unwrap();
    (path, fixtures[2].manifest.records[0].image_path.clone())
}

#[test]
fn category_codes_are_canonical() {
    let codes: Vec<String> = (0..DERM_N_CATEGORIES)
        .map(|i| unsafe { CStr::from_ptr(derm_category_code(i)) }.to_str().unwrap().to_string())
        .collect();
    assert_eq!(codes, ["MEL", "NV", "BCC", "AKIEC", "BKL", "DF", "VASC"]);
    assert!(derm_category_code(7).is_null());
}

#[test]
fn softmax_and_metrics() {
    let logits = [2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let mut probs = [0.0; 7];
    assert_eq!(unsafe { derm_softmax(logits.as_ptr(), 7, probs.as_mut_ptr()) }, DermStatus::Ok);
    assert!((probs[0] - 0.5519).abs() < 1e-4);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let preds = [0usize, 0, 0, 0, 1, 1, 1, 1, 0, 0];
    let truths = [0usize, 0, 0, 0, 0, 1, 1, 1, 1, 1];
    let mut counts = [0u64; 49];
    let s = unsafe { derm_confusion_matrix(preds.as_ptr(), truths.as_ptr(), 10, counts.as_mut_ptr()) };
    assert_eq!(s, DermStatus::Ok);
    assert_eq!((counts[0], counts[1], counts[7], counts[8]), (4, 1, 2, 3));
    let mut ba = 0.0;
    assert_eq!(unsafe { derm_balanced_accuracy(counts.as_ptr(), &mut ba) }, DermStatus::Ok);
    assert_eq!(ba, 0.7);

    let empty = [0u64; 49];
    assert_eq!(unsafe { derm_balanced_accuracy(empty.as_ptr(), &mut ba) }, DermStatus::InvalidArgument);
    assert!(last_error().contains("empty"));

    let bad = [9usize];
    let s = unsafe { derm_confusion_matrix(bad.as_ptr(), bad.as_ptr(), 1, counts.as_mut_ptr()) };
    assert_eq!(s, DermStatus::InvalidArgument);
    assert_eq!(unsafe { derm_balanced_accuracy(ptr::null(), &mut ba) }, DermStatus::NullPointer);
}

#[test]
fn schedule_handle() {
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { derm_schedule_new(1e-2, 313, &mut handle) }, DermStatus::Ok);
    unsafe {
        assert_eq!(derm_schedule_total_steps(handle), 5947);
        assert_eq!(derm_schedule_total_epochs(handle), 19);
        let mut lr = -1.0;
        assert_eq!(derm_schedule_lr(handle, 0, 0, &mut lr), DermStatus::Ok);
        assert_eq!(lr, 0.0);
        assert_eq!(derm_schedule_lr(handle, 1252, 0, &mut lr), DermStatus::Ok);
        assert_eq!(lr, 1e-2 / 9.0);
        assert_eq!(derm_schedule_lr(handle, 5947, 2, &mut lr), DermStatus::InvalidArgument);
        assert!(last_error().contains("5947"));
        derm_schedule_free(handle);
        derm_schedule_free(ptr::null_mut());
        assert_eq!(derm_schedule_total_steps(ptr::null()), 0);
    }

    let toml = CString::new("[train]\nbatch_size = 10\n").unwrap();
    let mut h2 = ptr::null_mut();
    assert_eq!(unsafe { derm_schedule_from_config(toml.as_ptr(), 100, &mut h2) }, DermStatus::Ok);
    assert_eq!(unsafe { derm_schedule_total_steps(h2) }, 190);
    unsafe { derm_schedule_free(h2) };

    let bad = CString::new("[train]\nbatch_size = \"x\"").unwrap();
    let mut h3 = ptr::null_mut();
    assert_eq!(unsafe { derm_schedule_from_config(bad.as_ptr(), 100, &mut h3) }, DermStatus::InvalidArgument);
    assert!(h3.is_null());
    assert_eq!(unsafe { derm_schedule_new(-1.0, 10, &mut h3) }, DermStatus::InvalidArgument);
}

#[test]
fn model_handle_predicts() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, image) = toy_checkpoint(dir.path());
    let ckpt = CString::new(ckpt.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { derm_model_load(ckpt.as_ptr(), &mut model) }, DermStatus::Ok);

    let image_c = CString::new(image.to_str().unwrap()).unwrap();
    let mut probs = [0.0; 7];
    let mut label = usize::MAX;
    let s = unsafe { derm_model_predict_file(model, image_c.as_ptr(), probs.as_mut_ptr(), &mut label) };
    assert_eq!(s, DermStatus::Ok);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(label < 7);

    // Same image through the buffer entry point.
    let raw = dermclass::dataset::load_and_resize(&image, 224).unwrap();
    let norm = dermclass::dataset::imagenet_normalize(&raw).unwrap();
    let buf: Vec<f64> = norm.data.iter().copied().collect();
    let mut probs2 = [0.0; 7];
    let s = unsafe { derm_model_predict(model, buf.as_ptr(), 224, 224, probs2.as_mut_ptr()) };
    assert_eq!(s, DermStatus::Ok);
    assert_eq!(probs, probs2);

    let missing = CString::new(dir.path().join("nope.jpg").to_str().unwrap()).unwrap();
    let s = unsafe { derm_model_predict_file(model, missing.as_ptr(), probs.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(s, DermStatus::Image);
    unsafe { derm_model_free(model) };

    let bogus = CString::new(image.to_str().unwrap()).unwrap();
    let mut m2 = ptr::null_mut();
    assert_eq!(unsafe { derm_model_load(bogus.as_ptr(), &mut m2) }, DermStatus::Checkpoint);
    assert!(m2.is_null());
    assert_eq!(unsafe { derm_model_load(ptr::null(), &mut m2) }, DermStatus::NullPointer);
}
