//! C ABI for the `cvdist` simulation library.
//!
//! Conventions:
//! - Handles (`CvdistConfig`, `CvdistReport`) are opaque; create and destroy
//!   them only through this API. Every `*_free` accepts NULL.
//! - Functions returning [`CvdistStatus`] report failure without touching
//!   their out-parameters; functions returning a pointer return NULL on
//!   failure. Either way [`cvdist_last_error`] then holds a message for the
//!   calling thread.
//! - Configuration uses the same flat `key = value` vocabulary as the CLI
//!   config file (`sigma_pn`, `q`, `n_shots`, `seed`, `eta`, ...), so a
//!   binding can expose one string-based setter instead of dozens of typed
//!   ones.
//!
//! The generated header lands in `include/cvdist.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cvdist::config::apply_key;
use cvdist::metrics::{metrics_report, MetricsReport};
use cvdist::oracle::{oracle_curve, QuadratureGrid};
use cvdist::protocol::{run_ensemble, ProtocolConfig};
use cvdist::sweep::{calibrate_eta, verify, SweepSpec};
use cvdist::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvdistStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    /// Parameters or state violate physicality.
    Unphysical = 4,
    NumericalFailure = 5,
    InsufficientData = 6,
    /// No shot satisfied the trigger condition.
    EmptyEnsemble = 7,
    /// The quadrature oracle failed its own convergence self-check.
    OracleConvergence = 8,
    IoError = 9,
    /// The library caught an internal panic at the boundary.
    Panic = 10,
}

/// Opaque sweep/run configuration handle.
pub struct CvdistConfig {
    spec: SweepSpec,
}

/// Opaque result handle for one simulated grid point.
pub struct CvdistReport {
    metrics: MetricsReport,
}

/// Deterministic quadrature-oracle prediction for one grid point.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CvdistOracleMoments {
    pub q: f64,
    pub success_rate: f64,
    /// Var(X_VA + X_VB), natural units.
    pub var_xplus: f64,
    /// Var(P_VA - P_VB), natural units.
    pub var_pminus: f64,
    /// Duan total variance, vacuum = 1.
    pub total_variance: f64,
    /// det of the normalized covariance matrix.
    pub determinant: f64,
    pub purity: f64,
    pub log_negativity: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(clean).unwrap_or_default();
    });
}

fn fail(e: &Error) -> CvdistStatus {
    set_error(&e.to_string());
    match e {
        Error::InvalidConfig(_) => CvdistStatus::InvalidConfig,
        Error::Physicality(_) => CvdistStatus::Unphysical,
        Error::Numerical(_) => CvdistStatus::NumericalFailure,
        Error::InsufficientData(_) => CvdistStatus::InsufficientData,
        Error::EmptyEnsemble { .. } => CvdistStatus::EmptyEnsemble,
        Error::OracleConvergence(_) => CvdistStatus::OracleConvergence,
        Error::Io(_) => CvdistStatus::IoError,
    }
}

/// Run `f` with panics converted to [`CvdistStatus::Panic`].
fn guarded(f: impl FnOnce() -> CvdistStatus) -> CvdistStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic caught at the FFI boundary");
            CvdistStatus::Panic
        }
    }
}

/// # Safety
/// `s` must be NULL or a NUL-terminated string.
unsafe fn cstr<'a>(s: *const c_char) -> Result<&'a str, CvdistStatus> {
    if s.is_null() {
        set_error("NULL string argument");
        return Err(CvdistStatus::NullArgument);
    }
    unsafe { CStr::from_ptr(s) }.to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        CvdistStatus::InvalidUtf8
    })
}

/// The experiment the spec points at: exactly one noise strength and one
/// trigger threshold.
fn single_point(spec: &SweepSpec) -> Result<ProtocolConfig, Error> {
    spec.validate()?;
    if spec.sigma_list.len() != 1 || spec.q_grid.len() != 1 {
        return Err(Error::InvalidConfig(format!(
            "this entry point runs one grid point; configure exactly one sigma_pn and one Q \
             (got {} x {})",
            spec.sigma_list.len(),
            spec.q_grid.len()
        )));
    }
    let mut cfg = spec.base.clone().with_sigma(spec.sigma_list[0])?;
    cfg.q = spec.q_grid[0];
    Ok(cfg)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cvdist_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the calling thread's last error message into `buf` (truncating if
/// needed, always NUL-terminated when `cap > 0`). Returns the full message
/// length in bytes, excluding the terminator; 0 means no pending error.
#[no_mangle]
pub unsafe extern "C" fn cvdist_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// New configuration with the library defaults, as a single default grid
/// point. Free with [`cvdist_config_free`].
#[no_mangle]
pub extern "C" fn cvdist_config_new() -> *mut CvdistConfig {
    let mut spec = SweepSpec::default();
    // FFI runs address one point at a time; start from one
    spec.sigma_list = vec![spec.sigma_list[spec.sigma_list.len() - 1]];
    spec.q_grid = vec![spec.base.q];
    Box::into_raw(Box::new(CvdistConfig { spec }))
}

/// Set one configuration key, e.g. ("sigma_pn", "0.3") or ("q", "0.8").
/// Keys and values use exactly the CLI config-file vocabulary; unknown keys
/// are rejected.
///
/// # Safety
/// `cfg` must come from [`cvdist_config_new`]; `key`/`value` must be
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn cvdist_config_set(
    cfg: *mut CvdistConfig,
    key: *const c_char,
    value: *const c_char,
) -> CvdistStatus {
    guarded(|| {
        let Some(cfg) = (unsafe { cfg.as_mut() }) else {
            set_error("NULL config handle");
            return CvdistStatus::NullArgument;
        };
        let (key, value) = match (unsafe { cstr(key) }, unsafe { cstr(value) }) {
            (Ok(k), Ok(v)) => (k, v),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match apply_key(&mut cfg.spec, key.trim(), value.trim()) {
            Ok(()) => CvdistStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `cfg` must be NULL or a pointer from [`cvdist_config_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cvdist_config_free(cfg: *mut CvdistConfig) {
    if !cfg.is_null() {
        drop(unsafe { Box::from_raw(cfg) });
    }
}

/// Simulate the configured grid point (exactly one sigma_pn and one Q) and
/// return a report handle, or NULL with a pending error. Free the result
/// with [`cvdist_report_free`].
///
/// # Safety
/// `cfg` must come from [`cvdist_config_new`].
#[no_mangle]
pub unsafe extern "C" fn cvdist_run_point(cfg: *const CvdistConfig) -> *mut CvdistReport {
    let mut out: *mut CvdistReport = ptr::null_mut();
    guarded(|| {
        let Some(cfg) = (unsafe { cfg.as_ref() }) else {
            set_error("NULL config handle");
            return CvdistStatus::NullArgument;
        };
        let run = || -> Result<MetricsReport, Error> {
            let point = single_point(&cfg.spec)?;
            metrics_report(&run_ensemble(&point)?)
        };
        match run() {
            Ok(metrics) => {
                out = Box::into_raw(Box::new(CvdistReport { metrics }));
                CvdistStatus::Ok
            }
            Err(e) => fail(&e),
        }
    });
    out
}

fn lookup(metrics: &MetricsReport, name: &str) -> Option<cvdist::metrics::Estimate> {
    Some(match name {
        "success_rate" => metrics.success_rate,
        "var_xplus" => metrics.var_xplus,
        "var_pminus" => metrics.var_pminus,
        "I" | "total_variance" => metrics.total_variance,
        "D" | "determinant" => metrics.determinant,
        "purity" => metrics.purity,
        "logneg" | "log_negativity" => metrics.log_negativity,
        "kurtosis_xplus" => metrics.kurtosis_xplus,
        "kurtosis_pminus" => metrics.kurtosis_pminus,
        _ => return None,
    })
}

/// Read one scalar from a report by name: success_rate, var_xplus,
/// var_pminus, I, D, purity, logneg, kurtosis_xplus or kurtosis_pminus
/// (long aliases total_variance/determinant/log_negativity also work).
/// Estimates degraded by scarce statistics read as NaN.
///
/// # Safety
/// `report` must come from [`cvdist_run_point`]; `name` must be a
/// NUL-terminated string; `value`/`se` may be NULL when not wanted.
#[no_mangle]
pub unsafe extern "C" fn cvdist_report_metric(
    report: *const CvdistReport,
    name: *const c_char,
    value: *mut f64,
    se: *mut f64,
) -> CvdistStatus {
    guarded(|| {
        let Some(report) = (unsafe { report.as_ref() }) else {
            set_error("NULL report handle");
            return CvdistStatus::NullArgument;
        };
        let name = match unsafe { cstr(name) } {
            Ok(n) => n,
            Err(s) => return s,
        };
        let Some(estimate) = lookup(&report.metrics, name.trim()) else {
            set_error(&format!("unknown metric '{name}'"));
            return CvdistStatus::InvalidConfig;
        };
        if let Some(v) = unsafe { value.as_mut() } {
            *v = estimate.value;
        }
        if let Some(s) = unsafe { se.as_mut() } {
            *s = estimate.se;
        }
        CvdistStatus::Ok
    })
}

/// Accepted and total shot counts of the simulated point.
///
/// # Safety
/// `report` must come from [`cvdist_run_point`]; out-pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn cvdist_report_counts(
    report: *const CvdistReport,
    accepted: *mut u64,
    total: *mut u64,
) -> CvdistStatus {
    guarded(|| {
        let Some(report) = (unsafe { report.as_ref() }) else {
            set_error("NULL report handle");
            return CvdistStatus::NullArgument;
        };
        if let Some(a) = unsafe { accepted.as_mut() } {
            *a = report.metrics.n_accepted;
        }
        if let Some(t) = unsafe { total.as_mut() } {
            *t = report.metrics.n_total;
        }
        CvdistStatus::Ok
    })
}

/// # Safety
/// `report` must be NULL or a pointer from [`cvdist_run_point`], not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn cvdist_report_free(report: *mut CvdistReport) {
    if !report.is_null() {
        drop(unsafe { Box::from_raw(report) });
    }
}

/// Deterministic quadrature-oracle prediction for the configured grid point
/// (same single-point rule as [`cvdist_run_point`], no sampling involved).
///
/// # Safety
/// `cfg` must come from [`cvdist_config_new`]; `out` must point to a
/// [`CvdistOracleMoments`].
#[no_mangle]
pub unsafe extern "C" fn cvdist_oracle_point(
    cfg: *const CvdistConfig,
    out: *mut CvdistOracleMoments,
) -> CvdistStatus {
    guarded(|| {
        let Some(cfg) = (unsafe { cfg.as_ref() }) else {
            set_error("NULL config handle");
            return CvdistStatus::NullArgument;
        };
        let Some(out) = (unsafe { out.as_mut() }) else {
            set_error("NULL output pointer");
            return CvdistStatus::NullArgument;
        };
        let run = || -> Result<CvdistOracleMoments, Error> {
            let point = single_point(&cfg.spec)?;
            let grid = QuadratureGrid::new(cfg.spec.gh_order)?;
            let m = oracle_curve(&point, &[point.q], &grid)?.remove(0);
            Ok(CvdistOracleMoments {
                q: m.q,
                success_rate: m.success_rate,
                var_xplus: m.var_xplus,
                var_pminus: m.var_pminus,
                total_variance: m.total_variance,
                determinant: m.determinant,
                purity: m.purity,
                log_negativity: m.log_negativity,
            })
        };
        match run() {
            Ok(m) => {
                *out = m;
                CvdistStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Run the Monte Carlo / oracle verification gate over the configured grid
/// (all sigma_pn x Q combinations). `pass` is 1 when every z-score clears
/// the gate, 0 otherwise.
///
/// # Safety
/// `cfg` must come from [`cvdist_config_new`]; out-pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn cvdist_verify(
    cfg: *const CvdistConfig,
    max_abs_z: *mut f64,
    pass: *mut i32,
) -> CvdistStatus {
    guarded(|| {
        let Some(cfg) = (unsafe { cfg.as_ref() }) else {
            set_error("NULL config handle");
            return CvdistStatus::NullArgument;
        };
        match verify(&cfg.spec) {
            Ok(report) => {
                if let Some(z) = unsafe { max_abs_z.as_mut() } {
                    *z = report.max_abs_z;
                }
                if let Some(p) = unsafe { pass.as_mut() } {
                    *p = report.pass.into();
                }
                CvdistStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Efficiency giving the requested no-noise undistilled total variance at
/// the given input squeezing.
///
/// # Safety
/// `eta_out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn cvdist_calibrate_eta(
    target_i: f64,
    squeezing_db: f64,
    eta_out: *mut f64,
) -> CvdistStatus {
    guarded(|| {
        let Some(out) = (unsafe { eta_out.as_mut() }) else {
            set_error("NULL output pointer");
            return CvdistStatus::NullArgument;
        };
        match calibrate_eta(target_i, squeezing_db) {
            Ok(eta) => {
                *out = eta;
                CvdistStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn set(cfg: *mut CvdistConfig, key: &str, value: &str) -> CvdistStatus {
        let (k, v) = (CString::new(key).unwrap(), CString::new(value).unwrap());
        unsafe { cvdist_config_set(cfg, k.as_ptr(), v.as_ptr()) }
    }

    fn metric(report: *const CvdistReport, name: &str) -> (f64, f64) {
        let n = CString::new(name).unwrap();
        let (mut v, mut s) = (f64::NAN, f64::NAN);
        let status = unsafe { cvdist_report_metric(report, n.as_ptr(), &mut v, &mut s) };
        assert_eq!(status, CvdistStatus::Ok, "metric {name}");
        (v, s)
    }

    fn last_error() -> String {
        let mut buf = [0i8; 256];
        let n = unsafe { cvdist_last_error(buf.as_mut_ptr(), buf.len()) };
        let bytes: Vec<u8> = buf[..n.min(buf.len() - 1)].iter().map(|&b| b as u8).collect();
        String::from_utf8(bytes).unwrap()
    }

    #[test]
    fn round_trip_matches_the_oracle() {
        let cfg = cvdist_config_new();
        assert_eq!(set(cfg, "sigma_pn", "0.2"), CvdistStatus::Ok);
        assert_eq!(set(cfg, "q", "0.9"), CvdistStatus::Ok);
        assert_eq!(set(cfg, "n_shots", "60000"), CvdistStatus::Ok);
        assert_eq!(set(cfg, "seed", "9"), CvdistStatus::Ok);

        let mut oracle = CvdistOracleMoments::default();
        assert_eq!(unsafe { cvdist_oracle_point(cfg, &mut oracle) }, CvdistStatus::Ok);

        let report = unsafe { cvdist_run_point(cfg) };
        assert!(!report.is_null(), "{}", last_error());

        let (p, p_se) = metric(report, "success_rate");
        let (i, i_se) = metric(report, "I");
        assert!((p - oracle.success_rate).abs() < 5.0 * p_se);
        assert!((i - oracle.total_variance).abs() < 5.0 * i_se);

        let (mut accepted, mut total) = (0u64, 0u64);
        assert_eq!(
            unsafe { cvdist_report_counts(report, &mut accepted, &mut total) },
            CvdistStatus::Ok
        );
        assert_eq!(total, 60_000);
        assert!(accepted > 0 && accepted < total);

        unsafe { cvdist_report_free(report) };
        unsafe { cvdist_config_free(cfg) };
    }

    #[test]
    fn bad_inputs_set_statuses_and_messages() {
        // null handles
        assert_eq!(
            unsafe { cvdist_config_set(ptr::null_mut(), ptr::null(), ptr::null()) },
            CvdistStatus::NullArgument
        );
        assert!(unsafe { cvdist_run_point(ptr::null()) }.is_null());

        let cfg = cvdist_config_new();
        // unknown key is rejected and named
        assert_eq!(set(cfg, "typo_knob", "1"), CvdistStatus::InvalidConfig);
        assert!(last_error().contains("typo_knob"), "{}", last_error());

        // multi-point grids cannot be run as a single point
        assert_eq!(set(cfg, "sigma_list", "0.1,0.2"), CvdistStatus::Ok);
        assert!(unsafe { cvdist_run_point(cfg) }.is_null());
        assert!(last_error().contains("exactly one"), "{}", last_error());

        // unphysical value caught by validation
        assert_eq!(set(cfg, "sigma_list", "0.2"), CvdistStatus::Ok);
        assert_eq!(set(cfg, "eta", "1.5"), CvdistStatus::Ok);
        assert!(unsafe { cvdist_run_point(cfg) }.is_null());
        assert!(last_error().contains("eta"), "{}", last_error());

        unsafe { cvdist_config_free(cfg) };
        // frees tolerate NULL
        unsafe { cvdist_config_free(ptr::null_mut()) };
        unsafe { cvdist_report_free(ptr::null_mut()) };
    }

    #[test]
    fn calibration_and_version() {
        let mut eta = f64::NAN;
        assert_eq!(
            unsafe { cvdist_calibrate_eta(0.725, 4.5, &mut eta) },
            CvdistStatus::Ok
        );
        assert!(eta > 0.0 && eta <= 1.0);
        assert_eq!(
            unsafe { cvdist_calibrate_eta(1.5, 4.5, &mut eta) },
            CvdistStatus::InvalidConfig
        );

        let v = unsafe { CStr::from_ptr(cvdist_version()) }.to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn generated_header_covers_the_surface() {
        let header = std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/include/cvdist.h"
        ))
        .expect("header is generated by the build script");
        for symbol in [
            "cvdist_version",
            "cvdist_last_error",
            "cvdist_config_new",
            "cvdist_config_set",
            "cvdist_config_free",
            "cvdist_run_point",
            "cvdist_report_metric",
            "cvdist_report_counts",
            "cvdist_report_free",
            "cvdist_oracle_point",
            "cvdist_verify",
            "cvdist_calibrate_eta",
            "CvdistStatus",
            "CvdistOracleMoments",
        ] {
            assert!(header.contains(symbol), "header lost {symbol}");
        }
    }
}
