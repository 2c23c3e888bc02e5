//! C ABI over `crdmd`.
//!
//! Objects are opaque handles created by `crdmd_*_new`/producer calls and
//! released with the matching `*_free`. Every fallible call returns a
//! [`CrdmdStatus`]; the message of the last failure on the calling thread is
//! available from [`crdmd_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use crdmd::datalab::{corrupt, NoiseKind, NoiseSpec};
use crdmd::denoise::{solve_preprocessing, DenoiseConfig};
use crdmd::dimred::{solve_dimred, DimredConfig};
use crdmd::dmdcore::{extract_modes, fit_amplitudes_ls, Amplitudes, DmdModes};
use crdmd::metrics::{mpsnr, mssim};
use crdmd::{Error, Field};
use num_complex::Complex64;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrdmdStatus {
    Ok = 0,
    NullPointer = 1,
    Dimension = 2,
    Format = 3,
    Input = 4,
    Config = 5,
    Numerical = 6,
    Divergence = 7,
    Io = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrdmdNoiseKind {
    SaltPepper = 0,
    Missing = 1,
}

/// Opaque spatio-temporal field.
pub struct CrdmdField(Field);

/// Opaque set of DMD modes.
pub struct CrdmdModes(DmdModes);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CrdmdStatus {
    match e {
        Error::Dimension(_) => CrdmdStatus::Dimension,
        Error::Format(_) => CrdmdStatus::Format,
        Error::Input(_) => CrdmdStatus::Input,
        Error::Config(_) => CrdmdStatus::Config,
        Error::Numerical(_) => CrdmdStatus::Numerical,
        Error::Divergence { .. } => CrdmdStatus::Divergence,
        Error::Io(_) => CrdmdStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CrdmdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CrdmdStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_last_error(&format!("null pointer: {what}"));
            CrdmdStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic");
            CrdmdStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn c_path<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Lib(Error::Input("path is not UTF-8".into())))
}

/// Message of the last failed call on this thread; empty if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn crdmd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Copies `n1 * n2 * m` values (frame-major, row-major within a frame).
///
/// # Safety
/// `values` must point to `n1 * n2 * m` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn crdmd_field_new(
    n1: usize,
    n2: usize,
    m: usize,
    values: *const f64,
    out: *mut *mut CrdmdField,
) -> CrdmdStatus {
    guard(|| {
        let len =
            n1.checked_mul(n2).and_then(|v| v.checked_mul(m)).ok_or(Fail::Lib(Error::Input("size overflow".into())))?;
        let v = slice(values, len, "values")?.to_vec();
        put(out, CrdmdField(Field::new(n1, n2, m, v)?), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn crdmd_field_load(path: *const c_char, out: *mut *mut CrdmdField) -> CrdmdStatus {
    guard(|| {
        let f = Field::load(std::path::Path::new(c_path(path)?))?;
        put(out, CrdmdField(f), "out")
    })
}

/// # Safety
/// `field` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn crdmd_field_save(field: *const CrdmdField, path: *const c_char) -> CrdmdStatus {
    guard(|| {
        deref(field, "field")?.0.save(std::path::Path::new(c_path(path)?))?;
        Ok(())
    })
}

/// # Safety
/// `field` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn crdmd_field_dims(
    field: *const CrdmdField,
    n1: *mut usize,
    n2: *mut usize,
    m: *mut usize,
) -> CrdmdStatus {
    guard(|| {
        let f = &deref(field, "field")?.0;
        if n1.is_null() || n2.is_null() || m.is_null() {
            return Err(Fail::Null("dims"));
        }
        *n1 = f.n1();
        *n2 = f.n2();
        *m = f.m();
        Ok(())
    })
}

/// Copies the values into `out`, which must hold exactly `len` doubles.
///
/// # Safety
/// `field` must be a live handle; `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn crdmd_field_copy_values(field: *const CrdmdField, out: *mut f64, len: usize) -> CrdmdStatus {
    guard(|| {
        let f = &deref(field, "field")?.0;
        if len != f.values().len() {
            return Err(Error::Dimension(format!("buffer holds {len} values, field has {}", f.values().len())).into());
        }
        slice_mut(out, len, "out")?.copy_from_slice(f.values());
        Ok(())
    })
}

/// # Safety
/// `field` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn crdmd_field_free(field: *mut CrdmdField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Gaussian noise plus salt-and-pepper or missing entries, seeded.
///
/// # Safety
/// `field` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn crdmd_corrupt(
    field: *const CrdmdField,
    sigma: f64,
    ps: f64,
    kind: CrdmdNoiseKind,
    seed: u64,
    out: *mut *mut CrdmdField,
) -> CrdmdStatus {
    guard(|| {
        let kind = match kind {
            CrdmdNoiseKind::SaltPepper => NoiseKind::SaltPepper,
            CrdmdNoiseKind::Missing => NoiseKind::Missing,
        };
        let f = corrupt(&deref(field, "field")?.0, &NoiseSpec { sigma, ps, kind, seed })?;
        put(out, CrdmdField(f), "out")
    })
}

/// Mixed-noise preprocessing. Writes the denoised field and the sparse
/// component; `iterations` and `converged` may be null.
///
/// # Safety
/// `observed` must be a live handle; `x_out` and `s_out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn crdmd_denoise(
    observed: *const CrdmdField,
    eps: f64,
    eta: f64,
    w: f64,
    tol: f64,
    max_iter: usize,
    x_out: *mut *mut CrdmdField,
    s_out: *mut *mut CrdmdField,
    iterations: *mut usize,
    converged: *mut c_int,
) -> CrdmdStatus {
    guard(|| {
        let obs = &deref(observed, "observed")?.0;
        if x_out.is_null() || s_out.is_null() {
            return Err(Fail::Null("x_out/s_out"));
        }
        let mut cfg = DenoiseConfig::new(eps, eta, w);
        cfg.tol = tol;
        cfg.max_iter = max_iter;
        let res = solve_preprocessing(obs, &cfg)?;
        if !iterations.is_null() {
            *iterations = res.report.iterations;
        }
        if !converged.is_null() {
            *converged = res.report.converged as c_int;
        }
        put(x_out, CrdmdField(res.x), "x_out")?;
        put(s_out, CrdmdField(res.s), "s_out")
    })
}

/// Rank-`r` DMD of `data`.
///
/// # Safety
/// `data` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn crdmd_extract_modes(
    data: *const CrdmdField,
    r: usize,
    out: *mut *mut CrdmdModes,
) -> CrdmdStatus {
    guard(|| {
        let modes = extract_modes(&deref(data, "data")?.0, r)?;
        put(out, CrdmdModes(modes), "out")
    })
}

/// Number of modes (0 for a null handle).
///
/// # Safety
/// `modes` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn crdmd_modes_rank(modes: *const CrdmdModes) -> usize {
    modes.as_ref().map(|m| m.0.rank()).unwrap_or(0)
}

/// # Safety
/// `modes` must be a live handle; `re` and `im` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn crdmd_modes_eigenvalues(
    modes: *const CrdmdModes,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> CrdmdStatus {
    guard(|| {
        let m = &deref(modes, "modes")?.0;
        if len != m.rank() {
            return Err(Error::Dimension(format!("buffer holds {len} values, {} modes", m.rank())).into());
        }
        let (re, im) = (slice_mut(re, len, "re")?, slice_mut(im, len, "im")?);
        for (k, l) in m.lambda.iter().enumerate() {
            re[k] = l.re;
            im[k] = l.im;
        }
        Ok(())
    })
}

/// Least-squares amplitudes of `data` and the importance weights `nu`.
/// `nu` may be null.
///
/// # Safety
/// Handles must be live; every non-null buffer must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn crdmd_modes_fit_amplitudes(
    modes: *const CrdmdModes,
    data: *const CrdmdField,
    xi_re: *mut f64,
    xi_im: *mut f64,
    nu: *mut f64,
    len: usize,
) -> CrdmdStatus {
    guard(|| {
        let m = &deref(modes, "modes")?.0;
        let d = &deref(data, "data")?.0;
        if len != m.rank() {
            return Err(Error::Dimension(format!("buffer holds {len} values, {} modes", m.rank())).into());
        }
        let fit = fit_amplitudes_ls(m, d)?;
        let amps = Amplitudes::new(m, fit.xi, d.m())?;
        let (re, im) = (slice_mut(xi_re, len, "xi_re")?, slice_mut(xi_im, len, "xi_im")?);
        for (k, x) in amps.xi.iter().enumerate() {
            re[k] = x.re;
            im[k] = x.im;
        }
        if !nu.is_null() {
            slice_mut(nu, len, "nu")?.copy_from_slice(&amps.weights);
        }
        Ok(())
    })
}

/// # Safety
/// `modes` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn crdmd_modes_free(modes: *mut CrdmdModes) {
    if !modes.is_null() {
        drop(Box::from_raw(modes));
    }
}

/// Sparse amplitude reduction against `observed`. Amplitudes are updated in
/// place in `xi_re`/`xi_im` (the initial guess on entry); `recon_out`
/// receives the reconstruction. `feasible` may be null.
///
/// # Safety
/// Handles must be live; buffers must hold `len` doubles; `recon_out`
/// must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn crdmd_reduce(
    observed: *const CrdmdField,
    modes: *const CrdmdModes,
    nu: *const f64,
    xi_re: *mut f64,
    xi_im: *mut f64,
    len: usize,
    eps: f64,
    eta: f64,
    w: f64,
    mu: f64,
    tol: f64,
    max_iter: usize,
    recon_out: *mut *mut CrdmdField,
    feasible: *mut c_int,
) -> CrdmdStatus {
    guard(|| {
        let obs = &deref(observed, "observed")?.0;
        let m = &deref(modes, "modes")?.0;
        if recon_out.is_null() {
            return Err(Fail::Null("recon_out"));
        }
        let nu = slice(nu, len, "nu")?;
        let (re, im) = (slice_mut(xi_re, len, "xi_re")?, slice_mut(xi_im, len, "xi_im")?);
        let xi0: Vec<Complex64> = re.iter().zip(im.iter()).map(|(a, b)| Complex64::new(*a, *b)).collect();
        let mut cfg = DimredConfig::new(eps, eta, w);
        cfg.mu = mu;
        cfg.tol = tol;
        cfg.max_iter = max_iter;
        let res = solve_dimred(obs, m, nu, &xi0, &cfg)?;
        for (k, x) in res.xi.iter().enumerate() {
            re[k] = x.re;
            im[k] = x.im;
        }
        if !feasible.is_null() {
            *feasible = res.feasible as c_int;
        }
        put(recon_out, CrdmdField(res.reconstruction), "recon_out")
    })
}

/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn crdmd_mpsnr(
    truth: *const CrdmdField,
    estimate: *const CrdmdField,
    out: *mut f64,
) -> CrdmdStatus {
    guard(|| {
        let v = mpsnr(&deref(truth, "truth")?.0, &deref(estimate, "estimate")?.0)?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = v;
        Ok(())
    })
}

/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn crdmd_mssim(
    truth: *const CrdmdField,
    estimate: *const CrdmdField,
    out: *mut f64,
) -> CrdmdStatus {
    guard(|| {
        let v = mssim(&deref(truth, "truth")?.0, &deref(estimate, "estimate")?.0)?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = v;
        Ok(())
    })
}
