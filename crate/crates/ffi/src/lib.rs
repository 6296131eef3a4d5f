//! C ABI over the `ccopf` library.
//!
//! Cases and policies are opaque handles created by `*_load`/`*_parse` and
//! released with the matching `*_free`. Every fallible call returns a
//! [`CcopfStatus`]; on failure the message is kept per thread and can be
//! copied out with [`ccopf_last_error`]. Vectors use the library layouts:
//! `φ = [p_d; q_d]` (length `dim_phi`), `x = [v_set; p_g]` (length `dim_x`)
//! and `u = [v; θ without slack]` (length `dim_u`).

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ccopf::acpf::{constraint_values, solve_pf, Dispatch, LoadVector, Network, PfSettings};
use ccopf::caseio::{parse_case, read_case};
use ccopf::policy::{forward, PolicyParams};
use ccopf::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcopfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Dimension = 6,
    PfDivergence = 7,
    SingularJacobian = 8,
    BufferTooSmall = 9,
    Panic = 10,
    Other = 11,
}

/// Opaque parsed network.
pub struct CcopfCase {
    net: Network,
}

/// Opaque trained policy.
pub struct CcopfPolicy {
    params: PolicyParams,
}

/// Sizes of the vectors exchanged with a case.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CcopfDims {
    pub n_bus: usize,
    pub n_gen: usize,
    pub dim_x: usize,
    pub dim_u: usize,
    pub dim_phi: usize,
    pub n_constraints: usize,
}

/// Outcome of [`ccopf_pf_solve`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CcopfPfSummary {
    /// Total generation cost, $/h.
    pub cost: f64,
    /// Largest `value − limit` over the constraint rows; positive means violated.
    pub max_residual: f64,
    pub n_violated: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> CcopfStatus {
    match e {
        Error::Io(_) => CcopfStatus::Io,
        Error::Parse(_) | Error::Json(_) => CcopfStatus::Parse,
        Error::Validation(_) | Error::SingularBranch { .. } | Error::Config(_) => {
            CcopfStatus::Validation
        }
        Error::Dimension(_) => CcopfStatus::Dimension,
        Error::PfDivergence { .. } => CcopfStatus::PfDivergence,
        Error::SingularJacobian => CcopfStatus::SingularJacobian,
        _ => CcopfStatus::Other,
    }
}

struct Fail(CcopfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> CcopfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            CcopfStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CcopfStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(CcopfStatus::NullPointer, format!("{what} is null")))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(CcopfStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CcopfStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, want: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len != want {
        return Err(Fail(
            CcopfStatus::Dimension,
            format!("{what} has length {len}, expected {want}"),
        ));
    }
    if p.is_null() {
        return Err(Fail(CcopfStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, want: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(Fail(CcopfStatus::NullPointer, format!("{what} is null")));
    }
    if len < want {
        return Err(Fail(
            CcopfStatus::BufferTooSmall,
            format!("{what} holds {len} values, need {want}"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, want))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(CcopfStatus::NullPointer, "output handle is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ccopf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len − 1` bytes). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ccopf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Read a MATPOWER case file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ccopf_case_load(path: *const c_char, out: *mut *mut CcopfCase) -> CcopfStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let net = Network::new(read_case(path)?)?;
        store(out, CcopfCase { net })
    })
}

/// Parse MATPOWER case text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ccopf_case_parse(text: *const c_char, out: *mut *mut CcopfCase) -> CcopfStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let net = Network::new(parse_case(text)?)?;
        store(out, CcopfCase { net })
    })
}

/// Release a case. Null is ignored.
///
/// # Safety
/// `case` must come from `ccopf_case_load`/`ccopf_case_parse` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ccopf_case_free(case: *mut CcopfCase) {
    if !case.is_null() {
        drop(Box::from_raw(case));
    }
}

/// # Safety
/// `case` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ccopf_case_dims(case: *const CcopfCase, out: *mut CcopfDims) -> CcopfStatus {
    guard(|| {
        let net = &borrow(case, "case")?.net;
        if out.is_null() {
            return Err(Fail(CcopfStatus::NullPointer, "out is null".into()));
        }
        *out = CcopfDims {
            n_bus: net.case.n_bus(),
            n_gen: net.index.n_gen(),
            dim_x: net.index.dim_x(),
            dim_u: net.index.dim_u(),
            dim_phi: net.index.dim_phi(),
            n_constraints: net.layout.len(),
        };
        Ok(())
    })
}

/// Write the nominal load vector `φ` of the case.
///
/// # Safety
/// `case` must be a live handle; `phi` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ccopf_case_nominal_loads(case: *const CcopfCase, phi: *mut f64, len: usize) -> CcopfStatus {
    guard(|| {
        let net = &borrow(case, "case")?.net;
        let nominal = net.case.nominal_loads().to_phi();
        out_slice(phi, len, nominal.len(), "phi")?.copy_from_slice(&nominal);
        Ok(())
    })
}

/// Read a policy checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ccopf_policy_load(path: *const c_char, out: *mut *mut CcopfPolicy) -> CcopfStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let params = PolicyParams::load(path)?;
        store(out, CcopfPolicy { params })
    })
}

/// Release a policy. Null is ignored.
///
/// # Safety
/// `policy` must come from `ccopf_policy_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ccopf_policy_free(policy: *mut CcopfPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Dispatch `x` chosen by `policy` for loads `phi` on `case`.
///
/// # Safety
/// Handles must be live; `phi` must hold `phi_len` doubles and `x` room for `x_len`.
#[no_mangle]
pub unsafe extern "C" fn ccopf_policy_forward(
    policy: *const CcopfPolicy,
    case: *const CcopfCase,
    phi: *const f64,
    phi_len: usize,
    x: *mut f64,
    x_len: usize,
) -> CcopfStatus {
    guard(|| {
        let params = &borrow(policy, "policy")?.params;
        let net = &borrow(case, "case")?.net;
        params.check_network(&net.index)?;
        let loads = LoadVector::from_phi(slice_arg(phi, phi_len, net.index.dim_phi(), "phi")?);
        net.check_loads(&loads)?;
        let dispatch = forward(params, &loads)?.to_x();
        out_slice(x, x_len, dispatch.len(), "x")?.copy_from_slice(&dispatch);
        Ok(())
    })
}

/// Newton power flow for dispatch `x` and loads `phi`. Writes the state `u`
/// and, if `summary` is non-null, cost and constraint status.
///
/// # Safety
/// `case` must be live; `x`, `phi` must hold `x_len`, `phi_len` doubles and
/// `u` room for `u_len`; `summary` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ccopf_pf_solve(
    case: *const CcopfCase,
    x: *const f64,
    x_len: usize,
    phi: *const f64,
    phi_len: usize,
    u: *mut f64,
    u_len: usize,
    summary: *mut CcopfPfSummary,
) -> CcopfStatus {
    guard(|| {
        let net = &borrow(case, "case")?.net;
        let index = &net.index;
        let dispatch = Dispatch::from_x(slice_arg(x, x_len, index.dim_x(), "x")?, index);
        let loads = LoadVector::from_phi(slice_arg(phi, phi_len, index.dim_phi(), "phi")?);
        let out = out_slice(u, u_len, index.dim_u(), "u")?;
        let state = solve_pf(net, &dispatch, &loads, None, &PfSettings::default())?;
        out.copy_from_slice(&state.to_u(index));
        if let Some(s) = summary.as_mut() {
            let y = constraint_values(net, &state, &loads);
            *s = CcopfPfSummary {
                cost: net.cost(&dispatch, &state, &loads),
                max_residual: y.residuals().into_iter().fold(f64::NEG_INFINITY, f64::max),
                n_violated: y.violated().filter(|v| *v).count(),
            };
        }
        Ok(())
    })
}
