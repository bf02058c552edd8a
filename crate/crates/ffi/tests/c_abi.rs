use std::ffi::{CStr, CString};
use std::ptr;

use pacgrad::certifier::experiments;
use pacgrad::config::RunConfig;
use pacgrad_ffi::*;

const PARAMS_SMALL: PgCatoniParams = PgCatoniParams { eta: 1.0, n: 200, m: 100, delta: 0.1 };

fn blank() -> PgBoundBreakdown {
    PgBoundBreakdown {
        empirical_term: 0.0,
        confidence_term: 0.0,
        kl_term: 0.0,
        total: 0.0,
        theorem: PgTheorem::DataPac,
    }
}

fn last_error() -> String {
    let p = pg_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_summary_json() -> String {
    let cfg = RunConfig::from_toml(
        r#"
        algorithm = "fgd"
        seed = 3
        [model]
        kind = "linear_softmax"
        input_dim = 2
        num_classes = 2
        [data]
        kind = "blobs"
        n = 200
        input_dim = 2
        num_classes = 2
        separation = 4.0
        [split]
        m = 100
        [schedule]
        steps = 20
        gamma = 0.5
        eps = 0.001
        "#,
    )
    .unwrap();
    let (log, _) = experiments::execute(&cfg).unwrap();
    serde_json::to_string(&log.summary()).unwrap()
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/pacgrad.h");
    let src = include_str!("../src/lib.rs");
    let exported: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exported.len() >= 20, "{exported:?}");
    for name in exported {
        assert!(header.contains(&format!("{name}(")), "header lacks {name}");
    }
    assert!(header.contains("typedef struct PgTrajectory PgTrajectory;"));
}

#[test]
fn trajectory_handle_lifecycle() {
    let json = CString::new(small_summary_json()).unwrap();
    let mut handle: *mut PgTrajectory = ptr::null_mut();
    assert_eq!(pg_trajectory_from_json(json.as_ptr(), &mut handle), PgStatus::Ok);
    assert_eq!(pg_trajectory_steps(handle), 20);

    let mut b = blank();
    assert_eq!(pg_trajectory_certify(handle, PgTheorem::Fgd, &PARAMS_SMALL, ptr::null(), &mut b), PgStatus::Ok);
    assert_eq!(b.theorem, PgTheorem::Fgd);
    assert!((b.empirical_term + b.confidence_term + b.kl_term - b.total).abs() < 1e-12);

    let mut text = ptr::null_mut();
    assert_eq!(pg_trajectory_report_json(handle, PgTheorem::Fgd, &PARAMS_SMALL, ptr::null(), &mut text), PgStatus::Ok);
    let report: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(text) }.to_str().unwrap()).unwrap();
    assert_eq!(report["breakdown"]["total"].as_f64().unwrap(), b.total);
    unsafe { pg_string_free(text) };

    // a GLD certificate does not apply to a floored trajectory
    assert_eq!(pg_trajectory_certify(handle, PgTheorem::Gld, &PARAMS_SMALL, ptr::null(), &mut b), PgStatus::Contract);
    assert!(last_error().contains("does not apply"));

    let wrong_n = PgCatoniParams { n: 300, ..PARAMS_SMALL };
    assert_eq!(pg_trajectory_certify(handle, PgTheorem::Fgd, &wrong_n, ptr::null(), &mut b), PgStatus::Contract);
    unsafe { pg_trajectory_free(handle) };
    unsafe { pg_trajectory_free(ptr::null_mut()) };
}

#[test]
fn data_pac_needs_kl_extra() {
    let json = CString::new(small_summary_json()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(pg_trajectory_from_json(json.as_ptr(), &mut handle), PgStatus::Ok);
    let mut b = blank();
    let extras = PgExtras { kl: 2.5, lipschitz: f64::NAN, l0: f64::NAN, rgd_p: f64::NAN };
    assert_eq!(pg_trajectory_certify(handle, PgTheorem::DataPac, &PARAMS_SMALL, &extras, &mut b), PgStatus::Ok);
    let mut direct = blank();
    assert_eq!(pg_data_pac_bound(2.5, b.empirical_term / pg_c(1.0), &PARAMS_SMALL, &mut direct), PgStatus::Ok);
    assert!((direct.total - b.total).abs() < 1e-12);
    unsafe { pg_trajectory_free(handle) };
}

fn pg_c(eta: f64) -> f64 {
    let mut c = 0.0;
    assert_eq!(pg_c_eta(eta, &mut c), PgStatus::Ok);
    eta * c
}

#[test]
fn load_reports_io_and_format_errors() {
    let mut handle = ptr::null_mut();
    let missing = CString::new("/nonexistent/summary.json").unwrap();
    assert_eq!(pg_trajectory_load(missing.as_ptr(), &mut handle), PgStatus::Io);
    assert!(handle.is_null());
    let junk = CString::new("{\"schema_version\": 1}").unwrap();
    assert_eq!(pg_trajectory_from_json(junk.as_ptr(), &mut handle), PgStatus::Format);
    assert_eq!(pg_trajectory_load(ptr::null(), &mut handle), PgStatus::NullArgument);

    let dir = std::env::temp_dir().join(format!("pacgrad-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("summary.json");
    std::fs::write(&path, small_summary_json()).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(pg_trajectory_load(cpath.as_ptr(), &mut handle), PgStatus::Ok);
    unsafe { pg_trajectory_free(handle) };
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn lattice_sampling_is_seeded() {
    let draw = |seed| {
        let mut h = ptr::null_mut();
        assert_eq!(pg_lattice_new(0.1, 4, seed, &mut h), PgStatus::Ok);
        assert_eq!(pg_lattice_dim(h), 4);
        let mut buf = [0i64; 4];
        let mut all = Vec::new();
        for _ in 0..50 {
            assert_eq!(unsafe { pg_lattice_sample(h, buf.as_mut_ptr(), 4) }, PgStatus::Ok);
            all.extend_from_slice(&buf);
        }
        let mut short = [0i64; 3];
        assert_eq!(unsafe { pg_lattice_sample(h, short.as_mut_ptr(), 3) }, PgStatus::Contract);
        unsafe { pg_lattice_free(h) };
        all
    };
    let a = draw(9);
    assert_eq!(a, draw(9));
    assert_ne!(a, draw(10));
    // with p = 0.1 the mass at zero is 1/Z ≈ 0.83
    let zeros = a.iter().filter(|&&v| v == 0).count();
    assert!(zeros > 130 && zeros < 200, "{zeros}");

    let mut h = ptr::null_mut();
    assert_eq!(pg_lattice_new(0.5, 4, 0, &mut h), PgStatus::Domain);
    assert!(h.is_null());
}

#[test]
fn scalar_wrappers() {
    let mut y = 0.0;
    let mut x = 0.0;
    assert_eq!(pg_phi(0.3, 5.0, 10, &mut y), PgStatus::Ok);
    assert_eq!(pg_phi_inv(y, 5.0, 10, &mut x), PgStatus::Ok);
    assert!((x - 0.3).abs() < 1e-12);
    let mut cd = 0.0;
    assert_eq!(pg_c_delta(0.1, &mut cd), PgStatus::Ok);
    let l = 10f64.ln();
    assert!((cd - (4.0 + 2.0 * l + 5.66 * l.sqrt())).abs() < 1e-12);
    let cld = PgCldInputs { beta: 1.0, lambda_reg: 1.0, loss_bound: 0.25, lipschitz: 1.0, horizon: 0.0 };
    let mut b = blank();
    assert_eq!(pg_cld_bound(0.1, &cld, &PARAMS_SMALL, &mut b), PgStatus::Ok);
    assert_eq!(b.theorem, PgTheorem::Cld);
    assert_eq!(pg_cld_bound(0.1, ptr::null(), &PARAMS_SMALL, &mut b), PgStatus::NullArgument);
}
