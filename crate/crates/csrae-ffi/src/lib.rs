//! C ABI for the mixture-divergence core: opaque Gaussian-mixture handles
//! built from JSON, closed-form Cauchy-Schwarz and Gaussian KL divergences,
//! mixture sampling, and the Frechet distance between Gaussians fitted to raw
//! feature buffers.
//!
//! Conventions: every fallible function returns a [`CsraeStatus`] code and
//! writes results through out-pointers; `csrae_last_error_message` returns a
//! thread-local description of the most recent failure. Matrix buffers are
//! row-major `f64`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

use csrae::error::Error;
use csrae::eval::{frechet_distance, FeatureStats};
use csrae::gmm::{cs_divergence, kl_diag_gaussians, sample_gmm, DiagGmm};
use ndarray::{Array1, Array2};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsraeStatus {
    /// Success.
    Ok = 0,
    /// A pointer argument was null.
    NullPointer = 1,
    /// Arguments failed validation (shapes, ranges, component counts).
    InvalidArgument = 2,
    /// The JSON document could not be parsed into a mixture.
    ParseError = 3,
    /// A numerical failure (non-finite values, failed decomposition).
    NumericalError = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized: String = message.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_for(e: &Error) -> CsraeStatus {
    match e {
        Error::Json(_) | Error::Data(_) => CsraeStatus::ParseError,
        Error::Numerical(_) => CsraeStatus::NumericalError,
        _ => CsraeStatus::InvalidArgument,
    }
}

fn fail(e: Error) -> CsraeStatus {
    set_error(&e.to_string());
    status_for(&e)
}

fn null_arg(name: &str) -> CsraeStatus {
    set_error(&format!("{name} must not be null"));
    CsraeStatus::NullPointer
}

/// Opaque handle to a diagonal Gaussian mixture.
pub struct CsraeGmm {
    inner: DiagGmm,
}

/// Pointer to a thread-local, NUL-terminated description of the most recent
/// error on this thread. Valid until the next failing call on the same
/// thread; never free it.
#[no_mangle]
pub extern "C" fn csrae_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Parses a mixture from a JSON document of the form
/// `{"weights": [...], "means": [[...], ...], "vars": [[...], ...]}`.
/// On success writes a heap-allocated handle to `out`; release it with
/// [`csrae_gmm_free`].
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn csrae_gmm_from_json(
    json: *const c_char,
    out: *mut *mut CsraeGmm,
) -> CsraeStatus {
    if json.is_null() {
        return null_arg("json");
    }
    if out.is_null() {
        return null_arg("out");
    }
    let text = match CStr::from_ptr(json).to_str() {
        Ok(t) => t,
        Err(_) => {
            set_error("json is not valid UTF-8");
            return CsraeStatus::ParseError;
        }
    };
    let value: serde_json::Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return fail(Error::Json(e)),
    };
    match DiagGmm::from_json(&value) {
        Ok(gmm) => {
            *out = Box::into_raw(Box::new(CsraeGmm { inner: gmm }));
            CsraeStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Releases a mixture handle. Passing null is a no-op.
///
/// # Safety
/// `gmm` must be null or a pointer obtained from [`csrae_gmm_from_json`]
/// that has not been freed already.
#[no_mangle]
pub unsafe extern "C" fn csrae_gmm_free(gmm: *mut CsraeGmm) {
    if !gmm.is_null() {
        drop(Box::from_raw(gmm));
    }
}

/// Writes the dimensionality of the mixture to `out`.
///
/// # Safety
/// `gmm` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn csrae_gmm_dim(gmm: *const CsraeGmm, out: *mut usize) -> CsraeStatus {
    if gmm.is_null() {
        return null_arg("gmm");
    }
    if out.is_null() {
        return null_arg("out");
    }
    *out = (*gmm).inner.dim();
    CsraeStatus::Ok
}

/// Writes the number of mixture components to `out`.
///
/// # Safety
/// `gmm` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn csrae_gmm_components(
    gmm: *const CsraeGmm,
    out: *mut usize,
) -> CsraeStatus {
    if gmm.is_null() {
        return null_arg("gmm");
    }
    if out.is_null() {
        return null_arg("out");
    }
    *out = (*gmm).inner.len();
    CsraeStatus::Ok
}

/// Closed-form Cauchy-Schwarz divergence between two mixtures of equal
/// dimensionality.
///
/// # Safety
/// `q`, `p` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn csrae_cs_divergence(
    q: *const CsraeGmm,
    p: *const CsraeGmm,
    out: *mut f64,
) -> CsraeStatus {
    if q.is_null() {
        return null_arg("q");
    }
    if p.is_null() {
        return null_arg("p");
    }
    if out.is_null() {
        return null_arg("out");
    }
    match cs_divergence(&(*q).inner, &(*p).inner) {
        Ok(v) => {
            *out = v;
            CsraeStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Closed-form KL divergence; both mixtures must have exactly one component.
///
/// # Safety
/// `q`, `p` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn csrae_kl_divergence(
    q: *const CsraeGmm,
    p: *const CsraeGmm,
    out: *mut f64,
) -> CsraeStatus {
    if q.is_null() {
        return null_arg("q");
    }
    if p.is_null() {
        return null_arg("p");
    }
    if out.is_null() {
        return null_arg("out");
    }
    let (q, p) = (&(*q).inner, &(*p).inner);
    if q.len() != 1 || p.len() != 1 {
        set_error("closed-form KL requires single-component mixtures");
        return CsraeStatus::InvalidArgument;
    }
    match kl_diag_gaussians(&q.components()[0], &p.components()[0]) {
        Ok(v) => {
            *out = v;
            CsraeStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Draws `n` samples from the mixture into `out` (row-major, `n * dim`
/// doubles). `component` selects one component; pass a negative value to
/// sample from the full mixture. Sampling is deterministic in `seed`.
///
/// # Safety
/// `gmm` must be valid and `out` must point to at least `n * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn csrae_gmm_sample(
    gmm: *const CsraeGmm,
    n: usize,
    seed: u64,
    component: i64,
    out: *mut f64,
) -> CsraeStatus {
    if gmm.is_null() {
        return null_arg("gmm");
    }
    if out.is_null() && n > 0 {
        return null_arg("out");
    }
    let which = if component < 0 {
        None
    } else {
        Some(component as usize)
    };
    match sample_gmm(&(*gmm).inner, n, seed, which) {
        Ok((samples, _)) => {
            let flat: Vec<f64> = samples.iter().cloned().collect();
            ptr::copy_nonoverlapping(flat.as_ptr(), out, flat.len());
            CsraeStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Squared Frechet distance between Gaussians fitted to two row-major
/// feature buffers of shape `rows_a * dim` and `rows_b * dim`.
///
/// The distance is computed on the caller's features as-is; values are not
/// comparable to published FID numbers, which use Inception-network features.
///
/// # Safety
/// `a` must point to `rows_a * dim` doubles, `b` to `rows_b * dim` doubles,
/// and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn csrae_frechet_distance(
    a: *const f64,
    rows_a: usize,
    b: *const f64,
    rows_b: usize,
    dim: usize,
    out: *mut f64,
) -> CsraeStatus {
    if a.is_null() {
        return null_arg("a");
    }
    if b.is_null() {
        return null_arg("b");
    }
    if out.is_null() {
        return null_arg("out");
    }
    if dim == 0 || rows_a == 0 || rows_b == 0 {
        set_error("feature buffers must be non-empty");
        return CsraeStatus::InvalidArgument;
    }
    let build = |p: *const f64, rows: usize| -> Array2<f64> {
        let slice = std::slice::from_raw_parts(p, rows * dim);
        Array2::from_shape_vec((rows, dim), slice.to_vec()).unwrap()
    };
    let fa = match FeatureStats::fit(&build(a, rows_a)) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let fb = match FeatureStats::fit(&build(b, rows_b)) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    match frechet_distance(&fa, &fb) {
        Ok(v) => {
            *out = v;
            CsraeStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Squared Frechet distance directly from means and diagonal covariances
/// (`dim` doubles each); a convenience for callers that already hold
/// summary statistics.
///
/// # Safety
/// All pointers must reference `dim` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn csrae_frechet_distance_diag(
    mean_a: *const f64,
    var_a: *const f64,
    mean_b: *const f64,
    var_b: *const f64,
    dim: usize,
    out: *mut f64,
) -> CsraeStatus {
    for (name, p) in [
        ("mean_a", mean_a),
        ("var_a", var_a),
        ("mean_b", mean_b),
        ("var_b", var_b),
    ] {
        if p.is_null() {
            return null_arg(name);
        }
    }
    if out.is_null() {
        return null_arg("out");
    }
    if dim == 0 {
        set_error("dim must be >= 1");
        return CsraeStatus::InvalidArgument;
    }
    let vec_of = |p: *const f64| std::slice::from_raw_parts(p, dim).to_vec();
    let stats = |m: *const f64, v: *const f64| {
        FeatureStats::from_parts(
            Array1::from(vec_of(m)),
            Array2::from_diag(&Array1::from(vec_of(v))),
        )
    };
    let fa = match stats(mean_a, var_a) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let fb = match stats(mean_b, var_b) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    match frechet_distance(&fa, &fb) {
        Ok(v) => {
            *out = v;
            CsraeStatus::Ok
        }
        Err(e) => fail(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn make(json: &str) -> *mut CsraeGmm {
        let c = CString::new(json).unwrap();
        let mut handle: *mut CsraeGmm = ptr::null_mut();
        let status = unsafe { csrae_gmm_from_json(c.as_ptr(), &mut handle) };
        assert_eq!(status, CsraeStatus::Ok, "{}", last_error());
        handle
    }

    fn last_error() -> String {
        unsafe {
            CStr::from_ptr(csrae_last_error_message())
                .to_string_lossy()
                .into_owned()
        }
    }

    #[test]
    fn json_round_trip_and_divergences() {
        let q = make(r#"{"weights": [1.0], "means": [[0.0]], "vars": [[1.0]]}"#);
        let p = make(r#"{"weights": [1.0], "means": [[3.0]], "vars": [[1.0]]}"#);
        let mut dim = 0;
        let mut k = 0;
        unsafe {
            assert_eq!(csrae_gmm_dim(q, &mut dim), CsraeStatus::Ok);
            assert_eq!(csrae_gmm_components(q, &mut k), CsraeStatus::Ok);
        }
        assert_eq!((dim, k), (1, 1));
        let mut cs = 0.0;
        let mut kl = 0.0;
        unsafe {
            assert_eq!(csrae_cs_divergence(q, p, &mut cs), CsraeStatus::Ok);
            assert_eq!(csrae_kl_divergence(q, p, &mut kl), CsraeStatus::Ok);
        }
        assert!((cs - 2.25).abs() < 1e-12, "cs {cs}");
        assert!((kl - 4.5).abs() < 1e-12, "kl {kl}");
        unsafe {
            csrae_gmm_free(q);
            csrae_gmm_free(p);
        }
    }

    #[test]
    fn parse_and_null_errors_set_messages() {
        let bad = CString::new("{\"weights\": [0.5]}").unwrap();
        let mut handle: *mut CsraeGmm = ptr::null_mut();
        let status = unsafe { csrae_gmm_from_json(bad.as_ptr(), &mut handle) };
        assert_eq!(status, CsraeStatus::ParseError);
        assert!(!last_error().is_empty());

        let status = unsafe { csrae_gmm_from_json(ptr::null(), &mut handle) };
        assert_eq!(status, CsraeStatus::NullPointer);

        let mut out = 0.0;
        let status = unsafe { csrae_cs_divergence(ptr::null(), ptr::null(), &mut out) };
        assert_eq!(status, CsraeStatus::NullPointer);
    }

    #[test]
    fn kl_requires_single_components() {
        let q = make(
            r#"{"weights": [0.5, 0.5], "means": [[0.0], [1.0]], "vars": [[1.0], [1.0]]}"#,
        );
        let p = make(r#"{"weights": [1.0], "means": [[0.0]], "vars": [[1.0]]}"#);
        let mut out = 0.0;
        let status = unsafe { csrae_kl_divergence(q, p, &mut out) };
        assert_eq!(status, CsraeStatus::InvalidArgument);
        unsafe {
            csrae_gmm_free(q);
            csrae_gmm_free(p);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        let p = make(
            r#"{"weights": [0.5, 0.5], "means": [[-3.0, 0.0], [3.0, 0.0]],
                "vars": [[0.1, 0.1], [0.1, 0.1]]}"#,
        );
        let n = 64;
        let mut a = vec![0.0; n * 2];
        let mut b = vec![0.0; n * 2];
        unsafe {
            assert_eq!(csrae_gmm_sample(p, n, 9, -1, a.as_mut_ptr()), CsraeStatus::Ok);
            assert_eq!(csrae_gmm_sample(p, n, 9, -1, b.as_mut_ptr()), CsraeStatus::Ok);
        }
        assert_eq!(a, b);
        // component restriction keeps samples on one mode
        let mut c = vec![0.0; n * 2];
        unsafe {
            assert_eq!(csrae_gmm_sample(p, n, 9, 1, c.as_mut_ptr()), CsraeStatus::Ok);
        }
        assert!(c.chunks(2).all(|xy| xy[0] > 0.0));
        // out-of-range component fails
        let mut d = vec![0.0; 2];
        let status = unsafe { csrae_gmm_sample(p, 1, 9, 7, d.as_mut_ptr()) };
        assert_eq!(status, CsraeStatus::InvalidArgument);
        unsafe { csrae_gmm_free(p) };
    }

    #[test]
    fn frechet_matches_closed_forms() {
        // identical buffers -> 0
        let x: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let mut out = f64::NAN;
        let status = unsafe { csrae_frechet_distance(x.as_ptr(), 20, x.as_ptr(), 20, 2, &mut out) };
        assert_eq!(status, CsraeStatus::Ok, "{}", last_error());
        assert!(out.abs() < 1e-8);

        // 1D shifted unit-variance case -> 9
        let ma = [0.0];
        let mb = [3.0];
        let va = [1.0];
        let vb = [1.0];
        let status = unsafe {
            csrae_frechet_distance_diag(
                ma.as_ptr(),
                va.as_ptr(),
                mb.as_ptr(),
                vb.as_ptr(),
                1,
                &mut out,
            )
        };
        assert_eq!(status, CsraeStatus::Ok);
        assert!((out - 9.0).abs() < 1e-10, "{out}");
    }
}
