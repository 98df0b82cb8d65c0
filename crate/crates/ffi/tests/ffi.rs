use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use mdcorner::graphnet::{Model, NetConfig, Network, Standardizer};
use mdcorner_ffi::*;
use ndarray::Array2;

fn last_error() -> String {
    unsafe { CStr::from_ptr(mdc_last_error()) }.to_string_lossy().into_owned()
}

fn default_config() -> *mut MdcConfig {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { mdc_config_default(&mut cfg) }, MdcStatus::Ok);
    cfg
}

#[test]
fn config_json_round_trip() {
    let cfg = default_config();
    let mut text = ptr::null_mut();
    assert_eq!(unsafe { mdc_config_to_json(cfg, &mut text) }, MdcStatus::Ok);
    let json = unsafe { CStr::from_ptr(text) }.to_owned();
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { mdc_config_from_json(json.as_ptr(), &mut back) }, MdcStatus::Ok);
    let mut text2 = ptr::null_mut();
    assert_eq!(unsafe { mdc_config_to_json(back, &mut text2) }, MdcStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(text2) }, json.as_c_str());
    unsafe {
        mdc_string_free(text);
        mdc_string_free(text2);
        mdc_config_free(cfg);
        mdc_config_free(back);
    }
}

#[test]
fn bad_arguments_report_status_and_message() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { mdc_config_default(ptr::null_mut()) }, MdcStatus::NullPointer);
    assert!(last_error().contains("out"));
    let bad = CString::new(r#"{"train": {"epoch": 1}}"#).unwrap();
    assert_eq!(unsafe { mdc_config_from_json(bad.as_ptr(), &mut cfg) }, MdcStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().contains("epoch"));

    let cfg = default_config();
    let mut echo = ptr::null_mut();
    assert_eq!(unsafe { mdc_simulate(cfg, 12, 1.8, 0, &mut echo) }, MdcStatus::InvalidArgument);
    assert_eq!(unsafe { mdc_simulate(cfg, 1, -1.0, 0, &mut echo) }, MdcStatus::Config);
    assert_eq!(unsafe { mdc_echo_to_cloud(cfg, ptr::null(), ptr::null_mut()) }, MdcStatus::NullPointer);

    let missing = CString::new("/nonexistent/model-dir").unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { mdc_model_load(missing.as_ptr(), &mut model) }, MdcStatus::Io);
    assert!(last_error().contains("/nonexistent/model-dir"));

    // null handles are accepted by every free function
    unsafe {
        mdc_config_free(ptr::null_mut());
        mdc_echo_free(ptr::null_mut());
        mdc_cloud_free(ptr::null_mut());
        mdc_model_free(ptr::null_mut());
        mdc_string_free(ptr::null_mut());
        mdc_config_free(cfg);
    }
    assert_eq!(unsafe { mdc_cloud_len(ptr::null()) }, 0);
}

#[test]
fn echo_to_cloud_and_back_out() {
    let cfg = default_config();
    let mut echo = ptr::null_mut();
    assert_eq!(unsafe { mdc_simulate(cfg, 2, 1.8, 7, &mut echo) }, MdcStatus::Ok);
    let (mut rows, mut cols) = (0, 0);
    assert_eq!(unsafe { mdc_echo_dims(echo, &mut rows, &mut cols) }, MdcStatus::Ok);
    assert_eq!((rows, cols), (1024, 1024));
    let mut cloud = ptr::null_mut();
    assert_eq!(unsafe { mdc_echo_to_cloud(cfg, echo, &mut cloud) }, MdcStatus::Ok);
    let n = unsafe { mdc_cloud_len(cloud) };
    assert_eq!(n, 60);
    let mut buf = vec![f64::NAN; 3 * n];
    assert_eq!(unsafe { mdc_cloud_copy(cloud, buf.as_mut_ptr(), buf.len() - 1) }, MdcStatus::InvalidArgument);
    assert_eq!(unsafe { mdc_cloud_copy(cloud, buf.as_mut_ptr(), buf.len()) }, MdcStatus::Ok);
    assert!(buf.chunks(3).all(|p| (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]) && p[2].abs() <= 1.0));
    unsafe {
        mdc_cloud_free(cloud);
        mdc_echo_free(echo);
        mdc_config_free(cfg);
    }
}

#[test]
fn saved_model_predicts_like_the_library() {
    let net = Network::new(NetConfig::tiny_60()).unwrap();
    let params = net.init(3);
    let cloud = Array2::from_shape_fn((60, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0);
    let model = Model {
        standardizer: Standardizer::fit(std::slice::from_ref(&cloud)),
        net,
        params,
    };
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path(), Default::default()).unwrap();
    let expected = model.predict(&cloud).unwrap();

    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { mdc_model_load(path.as_ptr(), &mut handle) }, MdcStatus::Ok);
    let flat: Vec<f64> = cloud.iter().copied().collect();
    let mut label = u32::MAX;
    let mut probs = vec![0.0; 12];
    let st = unsafe { mdc_model_predict(handle, flat.as_ptr(), 60, &mut label, probs.as_mut_ptr(), 12) };
    assert_eq!(st, MdcStatus::Ok);
    assert_eq!(label as usize, expected.label);
    assert_eq!(probs, expected.probs);
    let st = unsafe { mdc_model_predict(handle, flat.as_ptr(), 59, &mut label, ptr::null_mut(), 0) };
    assert_eq!(st, MdcStatus::InvalidArgument);
    unsafe { mdc_model_free(handle) };
}

#[test]
fn header_declares_the_api_and_compiles() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/mdcorner.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "mdc_last_error",
        "mdc_config_default",
        "mdc_config_from_json",
        "mdc_config_to_json",
        "mdc_string_free",
        "mdc_config_free",
        "mdc_simulate",
        "mdc_echo_dims",
        "mdc_echo_free",
        "mdc_echo_to_cloud",
        "mdc_cloud_len",
        "mdc_cloud_copy",
        "mdc_cloud_free",
        "mdc_model_load",
        "mdc_model_predict",
        "mdc_model_free",
        "mdc_run_pipeline",
    ] {
        assert!(text.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(text.contains("MDC_STATUS_NULL_POINTER"));

    let Ok(out) = std::process::Command::new("cc").arg("--version").output() else { return };
    if !out.status.success() {
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"mdcorner.h\"\nint main(void) { MdcConfig *c = 0; MdcStatus s = mdc_config_default(&c); mdc_config_free(c); return s == MDC_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let st = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .status()
        .unwrap();
    assert!(st.success(), "header does not compile as C99");
}
