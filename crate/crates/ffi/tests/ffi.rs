use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use ccgan::conditioning::{Generator, LabelInputMode, NetSpec};
use ccgan::data::{generate, save_csv, SyntheticSpec};
use ccgan::netcore::Checkpoint;
use ccgan_ffi::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ccgan_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn sigma_kappa_nu_match_library() {
    let raw: Vec<f64> = (0..50).flat_map(|k| [k as f64; 3]).collect();
    let (mut sigma, mut kappa, mut nu) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(
            ccgan_rule_of_thumb_sigma(raw.as_ptr(), raw.len(), 0.0, 49.0, &mut sigma),
            CcganStatus::Ok
        );
        assert_eq!(
            ccgan_kappa_and_nu(raw.as_ptr(), raw.len(), 0.0, 49.0, 2.0, &mut kappa, &mut nu),
            CcganStatus::Ok
        );
    }
    let set = ccgan::vicinal::normalize_labels(&raw, 0.0, 49.0).unwrap();
    assert_eq!(sigma, ccgan::vicinal::rule_of_thumb_sigma(&set).unwrap());
    assert!((kappa - 2.0 / 49.0).abs() < 1e-15);
    assert!((nu - 1.0 / (kappa * kappa)).abs() < 1e-9);
    assert_eq!(last_error(), "");
}

#[test]
fn errors_set_status_and_message() {
    let raw = [1.0, 2.0];
    let mut out = 0.0;
    unsafe {
        assert_eq!(
            ccgan_rule_of_thumb_sigma(raw.as_ptr(), 2, 5.0, 5.0, &mut out),
            CcganStatus::InvalidArgument
        );
        assert!(last_error().contains("degenerate"));
        assert_eq!(
            ccgan_rule_of_thumb_sigma(ptr::null(), 2, 0.0, 5.0, &mut out),
            CcganStatus::NullPointer
        );
        assert!(last_error().contains("labels"));
        assert_eq!(
            ccgan_rule_of_thumb_sigma(raw.as_ptr(), 2, 0.0, 5.0, ptr::null_mut()),
            CcganStatus::NullPointer
        );
        let mut ds = ptr::null_mut();
        let missing = CString::new("/nonexistent/x.csv").unwrap();
        assert_eq!(
            ccgan_dataset_load(missing.as_ptr(), &mut ds),
            CcganStatus::Io
        );
        assert!(ds.is_null());
    }
}

#[test]
fn frechet_univariate_closed_form() {
    let mut out = 0.0;
    let (ma, ca, mb, cb) = ([1.0], [4.0], [-0.5], [0.25]);
    unsafe {
        assert_eq!(
            ccgan_frechet_distance(
                1,
                ma.as_ptr(),
                ca.as_ptr(),
                mb.as_ptr(),
                cb.as_ptr(),
                &mut out
            ),
            CcganStatus::Ok
        );
    }
    assert!((out - (1.5f64.powi(2) + 1.5f64.powi(2))).abs() < 1e-9);
    let asym = [1.0, 0.5, 0.0, 1.0];
    let m2 = [0.0, 0.0];
    unsafe {
        assert_eq!(
            ccgan_frechet_distance(
                2,
                m2.as_ptr(),
                asym.as_ptr(),
                m2.as_ptr(),
                asym.as_ptr(),
                &mut out
            ),
            CcganStatus::InvalidArgument
        );
    }
}

#[test]
fn dataset_handle_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        n_labels: 6,
        per_label: 2,
        holdout: 0.0,
        ..SyntheticSpec::default()
    };
    let (train, _, _) = generate(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let path = dir.path().join("train.csv");
    save_csv(&train, &path).unwrap();
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(
            ccgan_dataset_load(cpath(&path).as_ptr(), &mut ds),
            CcganStatus::Ok
        );
        assert_eq!(ccgan_dataset_len(ds), 12);
        assert_eq!(ccgan_dataset_dim(ds), 2);
        let mut small = [0.0; 3];
        assert_eq!(
            ccgan_dataset_raw_labels(ds, small.as_mut_ptr(), 3),
            CcganStatus::BufferTooSmall
        );
        let mut labels = vec![0.0; 12];
        assert_eq!(
            ccgan_dataset_raw_labels(ds, labels.as_mut_ptr(), 12),
            CcganStatus::Ok
        );
        assert_eq!(labels, train.labels().raw_labels());
        ccgan_dataset_free(ds);
        ccgan_dataset_free(ptr::null_mut());
        assert_eq!(ccgan_dataset_len(ptr::null()), 0);
    }
}

#[test]
fn generator_handle_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let g = Generator::new(
        LabelInputMode::Nli,
        &NetSpec::default(),
        None,
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    let mut ck: Checkpoint = g.checkpoint();
    ck.set_meta("raw_min", "10");
    ck.set_meta("raw_max", "20");
    let path = dir.path().join("generator.ckpt");
    ck.write(&path).unwrap();
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(
            ccgan_generator_load(cpath(&path).as_ptr(), &mut h),
            CcganStatus::Ok
        );
        assert_eq!(ccgan_generator_data_dim(h), 2);
        let labels = [10.0, 15.0, 20.0];
        let mut a = vec![0.0; 12];
        let mut b = vec![0.0; 12];
        assert_eq!(
            ccgan_generator_generate(h, labels.as_ptr(), 3, 2, 7, a.as_mut_ptr(), 12),
            CcganStatus::Ok
        );
        assert_eq!(
            ccgan_generator_generate(h, labels.as_ptr(), 3, 2, 7, b.as_mut_ptr(), 12),
            CcganStatus::Ok
        );
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(
            ccgan_generator_generate(h, labels.as_ptr(), 3, 2, 7, a.as_mut_ptr(), 11),
            CcganStatus::BufferTooSmall
        );
        let outside = [25.0];
        assert_eq!(
            ccgan_generator_generate(h, outside.as_ptr(), 1, 1, 7, a.as_mut_ptr(), 12),
            CcganStatus::InvalidArgument
        );
        assert_eq!(
            ccgan_generator_generate(h, labels.as_ptr(), 3, 0, 7, ptr::null_mut(), 0),
            CcganStatus::Ok
        );
        ccgan_generator_free(h);
    }
}

#[test]
fn header_declares_every_export() {
    let header =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ccgan.h"))
            .unwrap();
    for name in [
        "ccgan_last_error_message",
        "ccgan_rule_of_thumb_sigma",
        "ccgan_kappa_and_nu",
        "ccgan_frechet_distance",
        "ccgan_dataset_load",
        "ccgan_dataset_free",
        "ccgan_generator_load",
        "ccgan_generator_generate",
        "ccgan_generator_free",
        "typedef struct CcganDataset CcganDataset",
        "CCGAN_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let inc = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"ccgan.h\"\nint main(void) { double s; return (int)ccgan_rule_of_thumb_sigma(0, 0, 0.0, 1.0, &s); }\n",
    )
    .unwrap();
    let status = match std::process::Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-I")
        .arg(&inc)
        .arg(&src)
        .status()
    {
        Ok(s) => s,
        Err(_) => {
            eprintln!("no C compiler found; skipping");
            return;
        }
    };
    assert!(status.success());
}
