use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ccopf::acpf::{solve_pf, Dispatch, Network, PfSettings};
use ccopf::caseio::read_case;
use ccopf::ccsopf::TrainState;
use ccopf_ffi::*;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn load(name: &str) -> *mut CcopfCase {
    let path = CString::new(fixture(name).to_str().unwrap()).unwrap();
    let mut case = ptr::null_mut();
    assert_eq!(unsafe { ccopf_case_load(path.as_ptr(), &mut case) }, CcopfStatus::Ok);
    assert!(!case.is_null());
    case
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    unsafe { ccopf_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn dims(case: *const CcopfCase) -> CcopfDims {
    let mut d = CcopfDims::default();
    assert_eq!(unsafe { ccopf_case_dims(case, &mut d) }, CcopfStatus::Ok);
    d
}

#[test]
fn dims_match_the_library() {
    let case = load("case14_ieee.m");
    let net = Network::new(read_case(fixture("case14_ieee.m")).unwrap()).unwrap();
    let d = dims(case);
    assert_eq!(d.n_bus, 14);
    assert_eq!(d.dim_x, net.index.dim_x());
    assert_eq!(d.dim_u, 27);
    assert_eq!(d.dim_phi, 28);
    assert_eq!(d.n_constraints, net.layout.len());
    unsafe { ccopf_case_free(case) };
}

#[test]
fn power_flow_matches_the_library() {
    let case = load("case14_ieee.m");
    let d = dims(case);
    let net = Network::new(read_case(fixture("case14_ieee.m")).unwrap()).unwrap();
    let mut phi = vec![0.0; d.dim_phi];
    assert_eq!(unsafe { ccopf_case_nominal_loads(case, phi.as_mut_ptr(), phi.len()) }, CcopfStatus::Ok);
    let x = Dispatch::midpoint(&net.index).to_x();
    let mut u = vec![0.0; d.dim_u];
    let mut summary = CcopfPfSummary::default();
    let status = unsafe {
        ccopf_pf_solve(case, x.as_ptr(), x.len(), phi.as_ptr(), phi.len(), u.as_mut_ptr(), u.len(), &mut summary)
    };
    assert_eq!(status, CcopfStatus::Ok);

    let loads = net.case.nominal_loads();
    let dispatch = Dispatch::midpoint(&net.index);
    let state = solve_pf(&net, &dispatch, &loads, None, &PfSettings::default()).unwrap();
    assert_eq!(u, state.to_u(&net.index));
    assert_eq!(summary.cost, net.cost(&dispatch, &state, &loads));
    unsafe { ccopf_case_free(case) };
}

#[test]
fn policy_forward_matches_the_library() {
    let net = Network::new(read_case(fixture("case6ww.m")).unwrap()).unwrap();
    let params = TrainState::new(&net, &Default::default()).params;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    params.save(&path).unwrap();

    let case = load("case6ww.m");
    let mut policy = ptr::null_mut();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ccopf_policy_load(cpath.as_ptr(), &mut policy) }, CcopfStatus::Ok);
    let phi = net.case.nominal_loads().to_phi();
    let mut x = vec![0.0; net.index.dim_x()];
    let status = unsafe { ccopf_policy_forward(policy, case, phi.as_ptr(), phi.len(), x.as_mut_ptr(), x.len()) };
    assert_eq!(status, CcopfStatus::Ok);
    let expected = ccopf::policy::forward(&params, &net.case.nominal_loads()).unwrap().to_x();
    assert_eq!(x, expected);

    let other = load("case14_ieee.m");
    let status = unsafe { ccopf_policy_forward(policy, other, phi.as_ptr(), phi.len(), x.as_mut_ptr(), x.len()) };
    assert_eq!(status, CcopfStatus::Dimension);
    unsafe {
        ccopf_policy_free(policy);
        ccopf_case_free(case);
        ccopf_case_free(other);
    }
}

#[test]
fn errors_set_codes_and_messages() {
    let missing = CString::new("/nonexistent/case.m").unwrap();
    let mut case = ptr::null_mut();
    assert_eq!(unsafe { ccopf_case_load(missing.as_ptr(), &mut case) }, CcopfStatus::Io);
    assert!(case.is_null());
    assert!(!last_error().is_empty());

    let junk = CString::new("function mpc = junk\nmpc.baseMVA = ;").unwrap();
    assert_eq!(unsafe { ccopf_case_parse(junk.as_ptr(), &mut case) }, CcopfStatus::Parse);

    assert_eq!(unsafe { ccopf_case_load(ptr::null(), &mut case) }, CcopfStatus::NullPointer);
    assert_eq!(unsafe { ccopf_case_dims(ptr::null(), &mut CcopfDims::default()) }, CcopfStatus::NullPointer);

    let case = load("case2.m");
    let d = dims(case);
    let mut phi = vec![0.0; d.dim_phi - 1];
    assert_eq!(
        unsafe { ccopf_case_nominal_loads(case, phi.as_mut_ptr(), phi.len()) },
        CcopfStatus::BufferTooSmall
    );
    assert!(last_error().contains("need"));
    phi.push(0.0);
    assert_eq!(unsafe { ccopf_case_nominal_loads(case, phi.as_mut_ptr(), phi.len()) }, CcopfStatus::Ok);
    assert_eq!(last_error(), "");
    unsafe { ccopf_case_free(case) };
}

#[test]
fn last_error_truncates_and_reports_length() {
    let mut case = ptr::null_mut();
    unsafe { ccopf_case_load(ptr::null(), &mut case) };
    let full = unsafe { ccopf_last_error(ptr::null_mut(), 0) };
    assert_eq!(full, "path is null".len());
    let mut buf = [0 as std::ffi::c_char; 5];
    unsafe { ccopf_last_error(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), "path");
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ccopf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(root.join("include/ccopf.h")).unwrap();
    let source = std::fs::read_to_string(root.join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 10);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

/// Compile a C program against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    let lib = lib_dir.join("libccopf_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("ccopf_smoke");
    let status = Command::new("cc")
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&out)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let run = Command::new(&out).arg(fixture("case14_ieee.m")).output().unwrap();
    assert!(run.status.success());
    let text = String::from_utf8(run.stdout).unwrap();
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(fields[0], "0", "{text}");
    assert_eq!(fields[1], "14");
    assert!(fields[3].parse::<f64>().unwrap() > 0.0);
    assert_eq!(fields[4], "6");
    assert!(text.contains("expected"));
}
