//! C ABI over the barrier-steer safety filter.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every fallible call returns a [`BsStatus`];
//! on failure [`bs_last_error`] describes the cause for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use barrier_steer::barrier::{read_bank, BarrierBank};
use barrier_steer::steering::SteeringSession;
use barrier_steer::{ControlInput, Error, LatentState, SteeringConfig, SteeringMode};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    /// Malformed model file or data.
    Format = 4,
    DimensionMismatch = 5,
    NonFinite = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsMode {
    Qp = 0,
    Top2 = 1,
    Lse = 2,
}

impl From<BsMode> for SteeringMode {
    fn from(m: BsMode) -> Self {
        match m {
            BsMode::Qp => SteeringMode::Qp,
            BsMode::Top2 => SteeringMode::Top2,
            BsMode::Lse => SteeringMode::Lse,
        }
    }
}

/// Filter parameters; start from [`bs_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsConfig {
    pub alpha: f64,
    pub delta: f64,
    pub kappa: f64,
    pub dt: f64,
    pub mode: BsMode,
    pub grad_floor: f64,
    pub qp_tol: f64,
}

impl From<&BsConfig> for SteeringConfig {
    fn from(c: &BsConfig) -> Self {
        SteeringConfig {
            alpha: c.alpha,
            delta: c.delta,
            kappa: c.kappa,
            dt: c.dt,
            mode: c.mode.into(),
            grad_floor: c.grad_floor,
            qp_tol: c.qp_tol,
        }
    }
}

/// Per-call diagnostics written by the steering functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BsStepInfo {
    /// Smallest head margin `b_k - delta` before the step.
    pub min_margin_before: f64,
    /// Smallest head margin at the corrected state.
    pub min_margin_after: f64,
    /// Heads with a positive multiplier.
    pub active_constraints: usize,
    /// 1 when the filter fell back to a least-violating or passthrough control.
    pub fallback: i32,
}

/// Opaque barrier bank.
pub struct BsBank(BarrierBank);

/// Opaque steering session (bank plus configuration).
pub struct BsSession(SteeringSession);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> BsStatus {
    match err {
        Error::Io(_) => BsStatus::Io,
        Error::DimensionMismatch { .. } => BsStatus::DimensionMismatch,
        Error::NonFinite(_) | Error::NonFiniteState { .. } => BsStatus::NonFinite,
        Error::InvalidConfig(_) => BsStatus::InvalidArgument,
        _ => BsStatus::Format,
    }
}

/// Run `f`, translating errors and panics into a status.
fn guard<F>(f: F) -> BsStatus
where
    F: FnOnce() -> Result<(), (BsStatus, String)>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside barrier-steer".into());
            BsStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (BsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (BsStatus, String) {
    (BsStatus::NullPointer, format!("{what} is null"))
}

/// Read `len` values from `p`.
///
/// # Safety
/// `p` must be valid for `len` reads when non-null.
unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (BsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be valid for `len` writes when non-null.
unsafe fn write_out(p: *mut f64, src: &[f64], what: &str) -> Result<(), (BsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), p, src.len());
    Ok(())
}

fn min_margin(values: &[f64], delta: f64) -> f64 {
    values.iter().fold(f64::INFINITY, |m, b| m.min(b - delta))
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn bs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default filter parameters.
#[no_mangle]
pub extern "C" fn bs_config_default() -> BsConfig {
    let c = SteeringConfig::default();
    BsConfig {
        alpha: c.alpha,
        delta: c.delta,
        kappa: c.kappa,
        dt: c.dt,
        mode: match c.mode {
            SteeringMode::Qp => BsMode::Qp,
            SteeringMode::Top2 => BsMode::Top2,
            SteeringMode::Lse => BsMode::Lse,
        },
        grad_floor: c.grad_floor,
        qp_tol: c.qp_tol,
    }
}

/// Load a bank from a model file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bs_bank_load(path: *const c_char, out: *mut *mut BsBank) -> BsStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (BsStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let bank = read_bank(Path::new(path)).map_err(|e| {
            let (s, m) = lib_err(e);
            (s, format!("{path}: {m}"))
        })?;
        *out = Box::into_raw(Box::new(BsBank(bank)));
        Ok(())
    })
}

/// Bank with one half-space `b(h) = normal . h + offset` per row of
/// `normals` (row-major `heads x dim`).
///
/// # Safety
/// `normals` must hold `heads * dim` values, `offsets` `heads` values; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn bs_bank_half_spaces(
    normals: *const f64,
    offsets: *const f64,
    heads: usize,
    dim: usize,
    out: *mut *mut BsBank,
) -> BsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let normals = slice(normals, heads * dim, "normals")?;
        let offsets = slice(offsets, heads, "offsets")?;
        let barriers = (0..heads)
            .map(|k| barrier_steer::barrier::Barrier::half_space(normals[k * dim..(k + 1) * dim].to_vec(), offsets[k]))
            .collect();
        let bank = BarrierBank::new(barriers).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(BsBank(bank)));
        Ok(())
    })
}

/// # Safety
/// `bank` must come from a `bs_bank_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bs_bank_free(bank: *mut BsBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Number of heads, or 0 for a null bank.
///
/// # Safety
/// `bank` must be null or a live bank.
#[no_mangle]
pub unsafe extern "C" fn bs_bank_len(bank: *const BsBank) -> usize {
    bank.as_ref().map_or(0, |b| b.0.len())
}

/// Latent dimension, or 0 for a null bank.
///
/// # Safety
/// `bank` must be null or a live bank.
#[no_mangle]
pub unsafe extern "C" fn bs_bank_input_dim(bank: *const BsBank) -> usize {
    bank.as_ref().map_or(0, |b| b.0.input_dim())
}

/// Head values at `h` into `values_out` (length `bs_bank_len`).
///
/// # Safety
/// `h` must hold `dim` values and `values_out` room for every head.
#[no_mangle]
pub unsafe extern "C" fn bs_bank_values(
    bank: *const BsBank,
    h: *const f64,
    dim: usize,
    values_out: *mut f64,
) -> BsStatus {
    guard(|| {
        let bank = bank.as_ref().ok_or_else(|| null("bank"))?;
        let h = LatentState::new(slice(h, dim, "h")?.to_vec()).map_err(lib_err)?;
        let v = bank.0.values(&h).map_err(lib_err)?;
        write_out(values_out, &v, "values_out")
    })
}

/// New session over a copy of `bank`. A null `config` means the defaults.
///
/// # Safety
/// `bank` must be live; `config` null or valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bs_session_new(
    bank: *const BsBank,
    config: *const BsConfig,
    out: *mut *mut BsSession,
) -> BsStatus {
    guard(|| {
        let bank = bank.as_ref().ok_or_else(|| null("bank"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = config
            .as_ref()
            .map_or_else(SteeringConfig::default, SteeringConfig::from);
        let session = SteeringSession::new(bank.0.clone(), cfg).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(BsSession(session)));
        Ok(())
    })
}

/// # Safety
/// `session` must come from [`bs_session_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bs_session_free(session: *mut BsSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Filter the nominal control `u_nom` at `h_prev`. Writes the safe control to
/// `u_out` and the corrected next state to `h_out`; `info` may be null.
///
/// # Safety
/// `h_prev` and `u_nom` must hold `dim` values, `u_out` and `h_out` room for
/// `dim` values; `info` null or writable.
#[no_mangle]
pub unsafe extern "C" fn bs_session_steer_control(
    session: *const BsSession,
    h_prev: *const f64,
    u_nom: *const f64,
    dim: usize,
    u_out: *mut f64,
    h_out: *mut f64,
    info: *mut BsStepInfo,
) -> BsStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        let h = LatentState::new(slice(h_prev, dim, "h_prev")?.to_vec()).map_err(lib_err)?;
        let u = ControlInput::new(slice(u_nom, dim, "u_nom")?.to_vec()).map_err(lib_err)?;
        let o = s.0.steer_control(&h, &u).map_err(lib_err)?;
        write_out(u_out, o.u_star.as_slice(), "u_out")?;
        write_out(h_out, o.corrected_state.as_slice(), "h_out")?;
        if let Some(info) = info.as_mut() {
            let delta = s.0.config().delta;
            *info = BsStepInfo {
                min_margin_before: min_margin(&o.barrier_values_before, delta),
                min_margin_after: min_margin(&o.barrier_values_after, delta),
                active_constraints: o.active_constraints.len(),
                fallback: i32::from(o.fallback_triggered),
            };
        }
        Ok(())
    })
}

/// Filter the transition `h_prev -> h_t`, with nominal control
/// `(h_t - h_prev) / dt`. Outputs as in [`bs_session_steer_control`].
///
/// # Safety
/// As for [`bs_session_steer_control`], with `h_t` holding `dim` values.
#[no_mangle]
pub unsafe extern "C" fn bs_session_steer(
    session: *const BsSession,
    h_prev: *const f64,
    h_t: *const f64,
    dim: usize,
    u_out: *mut f64,
    h_out: *mut f64,
    info: *mut BsStepInfo,
) -> BsStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        let hp = LatentState::new(slice(h_prev, dim, "h_prev")?.to_vec()).map_err(lib_err)?;
        let ht = LatentState::new(slice(h_t, dim, "h_t")?.to_vec()).map_err(lib_err)?;
        let u = barrier_steer::nominal_control(&hp, &ht, s.0.config().dt).map_err(lib_err)?;
        match bs_session_steer_control(session, h_prev, u.as_slice().as_ptr(), dim, u_out, h_out, info) {
            BsStatus::Ok => Ok(()),
            st => Err((st, last_error_string())),
        }
    })
}

fn last_error_string() -> String {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map(|c| c.to_string_lossy().into_owned())
            .unwrap_or_default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_space_bank() -> *mut BsBank {
        // b(h) = -h_1 + 1
        let normals = [0.0, -1.0];
        let offsets = [1.0];
        let mut bank = ptr::null_mut();
        let st = unsafe { bs_bank_half_spaces(normals.as_ptr(), offsets.as_ptr(), 1, 2, &mut bank) };
        assert_eq!(st, BsStatus::Ok);
        bank
    }

    #[test]
    fn steer_matches_library() {
        let bank = half_space_bank();
        let mut session = ptr::null_mut();
        let cfg = bs_config_default();
        unsafe {
            assert_eq!(bs_session_new(bank, &cfg, &mut session), BsStatus::Ok);
            let h = [0.0, 0.5];
            let ht = [0.0, 2.0];
            let mut u = [0.0; 2];
            let mut hn = [0.0; 2];
            let mut info = BsStepInfo::default();
            let st = bs_session_steer(
                session,
                h.as_ptr(),
                ht.as_ptr(),
                2,
                u.as_mut_ptr(),
                hn.as_mut_ptr(),
                &mut info,
            );
            assert_eq!(st, BsStatus::Ok);
            let lib = SteeringSession::new((*bank).0.clone(), SteeringConfig::default())
                .unwrap()
                .steer(
                    &LatentState::new(h.to_vec()).unwrap(),
                    &LatentState::new(ht.to_vec()).unwrap(),
                )
                .unwrap();
            assert_eq!(&u[..], lib.u_star.as_slice());
            assert_eq!(&hn[..], lib.corrected_state.as_slice());
            assert_eq!(info.active_constraints, 1);
            assert!(info.min_margin_after >= -1e-12);
            bs_session_free(session);
            bs_bank_free(bank);
        }
    }

    #[test]
    fn errors_set_status_and_message() {
        let bank = half_space_bank();
        let mut session = ptr::null_mut();
        unsafe {
            assert_eq!(bs_session_new(bank, ptr::null(), &mut session), BsStatus::Ok);
            let h = [0.0; 3];
            let mut u = [0.0; 3];
            let mut hn = [0.0; 3];
            let st = bs_session_steer_control(
                session,
                h.as_ptr(),
                h.as_ptr(),
                3,
                u.as_mut_ptr(),
                hn.as_mut_ptr(),
                ptr::null_mut(),
            );
            assert_eq!(st, BsStatus::DimensionMismatch);
            assert!(!bs_last_error().is_null());
            let nan = [f64::NAN, 0.0];
            let st = bs_session_steer_control(
                session,
                nan.as_ptr(),
                nan.as_ptr(),
                2,
                u.as_mut_ptr(),
                hn.as_mut_ptr(),
                ptr::null_mut(),
            );
            assert_eq!(st, BsStatus::NonFinite);
            let st = bs_session_steer_control(
                ptr::null(),
                h.as_ptr(),
                h.as_ptr(),
                2,
                u.as_mut_ptr(),
                hn.as_mut_ptr(),
                ptr::null_mut(),
            );
            assert_eq!(st, BsStatus::NullPointer);
            let mut bad = bs_config_default();
            bad.alpha = -1.0;
            let mut s2 = ptr::null_mut();
            assert_eq!(bs_session_new(bank, &bad, &mut s2), BsStatus::InvalidArgument);
            assert!(s2.is_null());
            bs_session_free(session);
            bs_bank_free(bank);
        }
    }

    #[test]
    fn missing_model_is_io() {
        let mut bank = ptr::null_mut();
        let path = CString::new("/nonexistent/model.cbfb").unwrap();
        let st = unsafe { bs_bank_load(path.as_ptr(), &mut bank) };
        assert_eq!(st, BsStatus::Io);
        assert!(bank.is_null());
        let msg = unsafe { CStr::from_ptr(bs_last_error()) }.to_str().unwrap();
        assert!(msg.contains("model.cbfb"), "{msg}");
    }

    #[test]
    fn version_is_nul_terminated() {
        let v = unsafe { CStr::from_ptr(bs_version()) };
        assert_eq!(v.to_str().unwrap(), barrier_steer::VERSION);
    }
}
