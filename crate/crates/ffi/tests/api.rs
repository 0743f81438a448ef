mod common;

use std::ffi::{CStr, CString};
use std::ptr;

use aerotext::corpus::OperatorClass;
use aerotext::evaluation::{classification_report, confusion_matrix};
use aerotext_ffi::*;

fn last_error() -> String {
    let p = atx_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(bytes: &[u8]) -> (AtxStatus, *mut AtxModel) {
    let mut m = ptr::null_mut();
    let s = unsafe { atx_model_load_bytes(bytes.as_ptr(), bytes.len(), &mut m) };
    (s, m)
}

#[test]
fn predict_matches_core() {
    let ck = common::checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    std::fs::write(&path, ck.to_bytes()).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();

    let mut m = ptr::null_mut();
    assert_eq!(unsafe { atx_model_load(cpath.as_ptr(), &mut m) }, AtxStatus::Ok);
    assert!(!m.is_null());
    assert!(atx_last_error_message().is_null());
    assert_eq!(unsafe { atx_model_max_len(m) }, 12);

    let text = "The navy patrol aircraft crashed at sea";
    let ctext = CString::new(text).unwrap();
    let mut probs = [0.0; 3];
    let mut class = -1;
    let s = unsafe { atx_model_predict(m, ctext.as_ptr(), probs.as_mut_ptr(), &mut class) };
    assert_eq!(s, AtxStatus::Ok);
    let (want_class, want_probs) = ck.model.predict(&ck.preprocessor.encode(text)).unwrap();
    assert_eq!(probs, want_probs);
    assert_eq!(class, want_class.code() as i32);
    unsafe { atx_model_free(m) };
}

#[test]
fn load_errors() {
    let ck = common::checkpoint();
    let bytes = ck.to_bytes();
    let (s, m) = load(&bytes[..bytes.len() - 3]);
    assert_eq!(s, AtxStatus::CorruptCheckpoint);
    assert!(m.is_null());
    assert!(last_error().contains("corrupt"));

    let mut v = bytes.clone();
    v[4] = 77;
    assert_eq!(load(&v).0, AtxStatus::VersionUnsupported);

    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { atx_model_load(missing.as_ptr(), &mut m) }, AtxStatus::Io);
    assert_eq!(unsafe { atx_model_load(ptr::null(), &mut m) }, AtxStatus::NullPointer);
    assert_eq!(
        unsafe { atx_model_load(missing.as_ptr(), ptr::null_mut()) },
        AtxStatus::NullPointer
    );
    unsafe { atx_model_free(ptr::null_mut()) };
}

#[test]
fn predict_argument_errors() {
    let (s, m) = load(&common::checkpoint().to_bytes());
    assert_eq!(s, AtxStatus::Ok);
    let mut probs = [0.0; 3];
    let mut class = 0;
    let bad = [0xffu8, 0xfe, 0];
    let s = unsafe { atx_model_predict(m, bad.as_ptr().cast(), probs.as_mut_ptr(), &mut class) };
    assert_eq!(s, AtxStatus::InvalidUtf8);
    let t = CString::new("x").unwrap();
    let s = unsafe { atx_model_predict(ptr::null(), t.as_ptr(), probs.as_mut_ptr(), &mut class) };
    assert_eq!(s, AtxStatus::NullPointer);
    assert!(last_error().contains("model"));
    let s = unsafe { atx_model_predict(m, t.as_ptr(), ptr::null_mut(), &mut class) };
    assert_eq!(s, AtxStatus::NullPointer);
    unsafe { atx_model_free(m) };
}

#[test]
fn class_names_and_version() {
    for c in OperatorClass::ALL {
        let p = atx_class_name(c.code() as i32);
        assert_eq!(unsafe { CStr::from_ptr(p) }.to_str().unwrap(), c.name());
    }
    assert!(atx_class_name(3).is_null());
    assert!(atx_class_name(-1).is_null());
    let v = unsafe { CStr::from_ptr(atx_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn report_matches_core() {
    let preds = [0, 1, 1, 2, 0, 0, 1, 2, 2, 0];
    let labels = [0, 0, 1, 2, 1, 0, 1, 2, 0, 0];
    let mut r = AtxReport::default();
    let s = unsafe { atx_classification_report(preds.as_ptr(), labels.as_ptr(), preds.len(), &mut r) };
    assert_eq!(s, AtxStatus::Ok);

    let cls = |v: &[i32]| v.iter().map(|&c| OperatorClass::from_code(c as usize).unwrap()).collect::<Vec<_>>();
    let cm = confusion_matrix(&cls(&preds), &cls(&labels)).unwrap();
    let want = classification_report(&cm).unwrap();
    assert_eq!(r.accuracy, want.accuracy);
    assert_eq!(r.macro_f1, want.macro_avg.f1);
    assert_eq!(r.weighted_recall, want.weighted.recall);
    assert_eq!(r.total, 10);
    for m in &want.per_class {
        let i = m.class.code();
        assert_eq!((r.precision[i], r.recall[i], r.f1[i], r.support[i]), (m.precision, m.recall, m.f1, m.support));
    }
    assert_eq!(r.confusion[3], cm.counts()[1][0]);

    let bad = [0, 5];
    let s = unsafe { atx_classification_report(bad.as_ptr(), labels.as_ptr(), 2, &mut r) };
    assert_eq!(s, AtxStatus::InvalidArgument);
    assert!(last_error().contains('5'));
    let s = unsafe { atx_classification_report(preds.as_ptr(), labels.as_ptr(), 0, &mut r) };
    assert_eq!(s, AtxStatus::InvalidArgument);
}
