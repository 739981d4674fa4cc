//! Exercises the C ABI from Rust, checks the generated header, and links a
//! small C program against the static library.

use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use hrsa_ffi::*;

fn fixture(name: &str) -> CString {
    let p = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name);
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(hrsa_last_error()) }
        .to_string_lossy()
        .into_owned()
}

struct Set(*mut HrsaActivationSet);

impl Set {
    fn load(name: &str) -> Set {
        let mut out = ptr::null_mut();
        let status = unsafe { hrsa_activation_set_load(fixture(name).as_ptr(), &mut out) };
        assert_eq!(status, HrsaStatus::Ok, "{}", last_error());
        Set(out)
    }
}

impl Drop for Set {
    fn drop(&mut self) {
        unsafe { hrsa_activation_set_free(self.0) }
    }
}

#[test]
fn handle_accessors() {
    let set = Set::load("base");
    let (mut layers, mut n, mut d) = (0, 0, 0);
    unsafe {
        assert_eq!(
            hrsa_activation_set_num_layers(set.0, &mut layers),
            HrsaStatus::Ok
        );
        assert_eq!(hrsa_activation_set_n_tokens(set.0, &mut n), HrsaStatus::Ok);
        assert_eq!(
            hrsa_activation_set_layer_dim(set.0, 2, &mut d),
            HrsaStatus::Ok
        );
        assert_eq!(
            hrsa_activation_set_layer_dim(set.0, 3, &mut d),
            HrsaStatus::InvalidArgument
        );
    }
    assert_eq!((layers, n, d), (3, 64, 8));
    assert!(last_error().contains("out of range"));

    let mut buf = vec![0.0; n * d];
    let status = unsafe { hrsa_activation_set_copy_layer(set.0, 1, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(status, HrsaStatus::Ok);
    let loaded = hrsa::load_activation_set(Path::new(fixture("base").to_str().unwrap())).unwrap();
    let m = loaded.layers()[1].data();
    assert_eq!(buf[3 * d + 5], m[(3, 5)]);
    let short = unsafe { hrsa_activation_set_copy_layer(set.0, 1, buf.as_mut_ptr(), 7) };
    assert_eq!(short, HrsaStatus::InvalidArgument);
}

#[test]
fn load_errors_map_to_status_codes() {
    let mut out = ptr::null_mut();
    let missing = CString::new("/definitely/not/here").unwrap();
    assert_eq!(
        unsafe { hrsa_activation_set_load(missing.as_ptr(), &mut out) },
        HrsaStatus::Io
    );
    assert!(out.is_null());
    assert_eq!(
        unsafe { hrsa_activation_set_load(ptr::null(), &mut out) },
        HrsaStatus::NullPointer
    );
    assert!(last_error().contains("dir"));
    unsafe { hrsa_activation_set_free(ptr::null_mut()) };
}

#[test]
fn metric_functions_match_library() {
    // 4 x 2 row-major swap fixture.
    let x = [1.0, 0.0, 0.9, 0.1, 0.0, 1.0, -1.0, 0.0];
    let y = [1.0, 0.0, 0.9, 0.1, -1.0, 0.0, 0.0, 1.0];
    let mut v = f64::NAN;
    unsafe {
        assert_eq!(
            hrsa_knn_overlap(x.as_ptr(), y.as_ptr(), 4, 2, 2, 1, &mut v),
            HrsaStatus::Ok
        );
        assert_eq!(v, 0.5);
        assert_eq!(
            hrsa_knn_overlap(x.as_ptr(), y.as_ptr(), 4, 2, 2, 4, &mut v),
            HrsaStatus::InvalidArgument
        );
        assert!(last_error().contains("k out of range"));

        let a = [0.0, 1.0, 2.0];
        let b = [0.0, 1.0, 4.0];
        assert_eq!(
            hrsa_linear_cka(a.as_ptr(), b.as_ptr(), 3, 1, 1, &mut v),
            HrsaStatus::Ok
        );
        assert!((v - 12.0 / 13.0).abs() < 1e-12);
        let flat = [2.0, 2.0, 2.0];
        assert_eq!(
            hrsa_linear_cka(flat.as_ptr(), b.as_ptr(), 3, 1, 1, &mut v),
            HrsaStatus::Numerical
        );

        assert_eq!(
            hrsa_dimwise_mean(x.as_ptr(), x.as_ptr(), 4, 2, &mut v),
            HrsaStatus::Ok
        );
        assert!((v - 1.0).abs() < 1e-12);

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let rot = [h, -h, h, h];
        assert_eq!(
            hrsa_inverse_row_entropy(rot.as_ptr(), 2, &mut v),
            HrsaStatus::Ok
        );
        assert!(v.abs() < 1e-12);
        assert_eq!(
            hrsa_inverse_row_entropy(ptr::null(), 2, &mut v),
            HrsaStatus::NullPointer
        );
    }
}

#[test]
fn procrustes_recovers_a_rotation() {
    let (n, d) = (20, 3);
    let mut rng = hrsa::synth::rng(3);
    let x = hrsa::synth::gaussian(&mut rng, n, d);
    let q = hrsa::synth::orthogonal(&mut rng, d);
    let y = &x * &q;
    let row_major = |m: &nalgebra::DMatrix<f64>| m.transpose().as_slice().to_vec();
    let (xb, yb) = (row_major(&x), row_major(&y));
    let mut o = vec![0.0; d * d];
    let (mut residual, mut h_inv) = (f64::NAN, f64::NAN);
    let status = unsafe {
        hrsa_procrustes(
            xb.as_ptr(),
            yb.as_ptr(),
            n,
            d,
            false,
            o.as_mut_ptr(),
            &mut residual,
            &mut h_inv,
        )
    };
    assert_eq!(status, HrsaStatus::Ok);
    assert!(residual < 1e-9);
    assert!((0.0..1.0).contains(&h_inv));
    let expected = row_major(&q);
    assert!(o.iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-9));
    let outputs_optional = unsafe {
        hrsa_procrustes(
            xb.as_ptr(),
            yb.as_ptr(),
            n,
            d,
            true,
            ptr::null_mut(),
            ptr::null_mut(),
            &mut h_inv,
        )
    };
    assert_eq!(outputs_optional, HrsaStatus::Ok);
}

#[test]
fn layer_grid_fills_row_major_with_nan_nulls() {
    let (a, b) = (Set::load("base"), Set::load("rotated"));
    let mut grid = vec![0.0; 9];
    let metric = CString::new("cka").unwrap();
    let status = unsafe { hrsa_layer_grid(a.0, b.0, metric.as_ptr(), 2, grid.as_mut_ptr(), 3, 3) };
    assert_eq!(status, HrsaStatus::Ok, "{}", last_error());
    for i in 0..3 {
        assert!((grid[i * 3 + i] - 1.0).abs() < 1e-9);
    }
    let wrong = unsafe { hrsa_layer_grid(a.0, b.0, metric.as_ptr(), 2, grid.as_mut_ptr(), 2, 3) };
    assert_eq!(wrong, HrsaStatus::InvalidArgument);

    // Widths differ between the two dumps, so dimension-bound cells are NaN.
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = hrsa::synth::rng(5);
    let mut load = |name: &str, d: usize| {
        let layers = vec![
            hrsa::synth::gaussian(&mut rng, 10, d),
            hrsa::synth::gaussian(&mut rng, 10, d),
        ];
        let set =
            hrsa::ActivationSet::from_matrices(name, "fp", hrsa::store::SourceDtype::F64, layers)
                .unwrap();
        hrsa::store::write_activation_set(&set, &tmp.path().join(name)).unwrap();
        let dir = CString::new(tmp.path().join(name).to_str().unwrap()).unwrap();
        let mut h = ptr::null_mut();
        assert_eq!(
            unsafe { hrsa_activation_set_load(dir.as_ptr(), &mut h) },
            HrsaStatus::Ok
        );
        Set(h)
    };
    let (narrow, wide) = (load("narrow", 3), load("wide", 4));
    let mut cells = vec![0.0; 4];
    for (name, null) in [("dimwise", true), ("cka", false)] {
        let metric = CString::new(name).unwrap();
        let status = unsafe {
            hrsa_layer_grid(
                narrow.0,
                wide.0,
                metric.as_ptr(),
                1,
                cells.as_mut_ptr(),
                2,
                2,
            )
        };
        assert_eq!(status, HrsaStatus::Ok);
        assert!(
            cells.iter().all(|c| c.is_nan() == null),
            "{name}: {cells:?}"
        );
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(hrsa_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/hrsa.h")).unwrap()
}

#[test]
fn header_declares_the_whole_api() {
    let h = header();
    assert!(h.contains("#ifndef HRSA_H"));
    assert!(h.contains("typedef struct HrsaActivationSet HrsaActivationSet;"));
    for variant in [
        "OK = 0",
        "NULL_POINTER = 1",
        "INVALID_ARGUMENT = 2",
        "IO = 3",
        "NUMERICAL = 4",
        "PANIC = 5",
    ] {
        assert!(
            h.contains(&format!("HRSA_STATUS_{variant}")),
            "missing {variant}"
        );
    }
    for f in [
        "hrsa_last_error",
        "hrsa_version",
        "hrsa_activation_set_load",
        "hrsa_activation_set_free",
        "hrsa_activation_set_num_layers",
        "hrsa_activation_set_n_tokens",
        "hrsa_activation_set_layer_dim",
        "hrsa_activation_set_copy_layer",
        "hrsa_linear_cka",
        "hrsa_knn_overlap",
        "hrsa_dimwise_mean",
        "hrsa_procrustes",
        "hrsa_inverse_row_entropy",
        "hrsa_layer_grid",
    ] {
        assert!(h.contains(&format!("{f}(")), "missing {f}");
    }
}

/// Directory holding this test's build artifacts (`target/<profile>`).
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_static_library() {
    let lib = artifact_dir().join("libhrsa_ffi.a");
    assert!(
        lib.exists(),
        "static library not built at {}",
        lib.display()
    );
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let build = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .expect("a C compiler is required for this test");
    assert!(
        build.status.success(),
        "{}",
        String::from_utf8_lossy(&build.stderr)
    );
    let run = Command::new(&exe)
        .arg(fixture("base").to_str().unwrap())
        .arg(fixture("rotated").to_str().unwrap())
        .output()
        .unwrap();
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
