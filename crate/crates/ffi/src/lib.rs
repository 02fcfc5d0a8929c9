//! C ABI for the sampling and blending core.
//!
//! Conventions: every fallible call returns a [`TdStatus`]; outputs go
//! through caller-allocated buffers or opaque handles created by `_new`
//! constructors and released by the matching `_free`. On failure the
//! thread-local message from [`td_last_error_message`] describes the error
//! and remains valid until the next failing call on the same thread. All
//! functions catch panics at the boundary and report them as errors rather
//! than unwinding across the ABI.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use truncdiff::batch::SampleBatch;
use truncdiff::blend::{poisson_blend, BlendProblem, GrayImage, Solver};
use truncdiff::denoiser::AnalyticDenoiser;
use truncdiff::diffusion::{sample_chain, truncated_sample, SamplerKind, SamplerSpec};
use truncdiff::error::Error;
use truncdiff::metrics::energy_distance;
use truncdiff::mixture::GaussianMixture;
use truncdiff::rng::child_seed;
use truncdiff::schedule::NoiseSchedule;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdStatus {
    Ok = 0,
    /// Invalid argument (wrong range, shape, or null pointer).
    Param = 1,
    /// Numeric failure (non-finite values, solver divergence).
    Numeric = 2,
    /// I/O failure.
    Io = 3,
    /// A panic crossed the boundary; state is still consistent.
    Internal = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn status_of(err: &Error) -> TdStatus {
    match err.exit_code() {
        1 => TdStatus::Param,
        _ => TdStatus::Numeric,
    }
}

fn run<F: FnOnce() -> Result<(), (TdStatus, String)>>(f: F) -> TdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TdStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(&msg);
            TdStatus::Internal
        }
    }
}

fn core_err(e: Error) -> (TdStatus, String) {
    (status_of(&e), e.to_string())
}

fn param_err(msg: &str) -> (TdStatus, String) {
    (TdStatus::Param, msg.to_string())
}

/// Message for the most recent failure on this thread. Borrowed pointer:
/// valid until the next failing td_ call on the same thread.
#[no_mangle]
pub extern "C" fn td_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static version string of the library.
#[no_mangle]
pub extern "C" fn td_version() -> *const c_char {
    concat!("truncdiff ", env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// --- schedule -------------------------------------------------------------

/// Opaque diffusion variance schedule.
pub struct TdSchedule {
    inner: NoiseSchedule,
}

/// Creates a linear schedule with `t` steps. On success writes a handle to
/// `out`; release it with `td_schedule_free`.
#[no_mangle]
pub extern "C" fn td_schedule_new_linear(
    t: usize,
    beta_start: f64,
    beta_end: f64,
    out: *mut *mut TdSchedule,
) -> TdStatus {
    run(|| {
        if out.is_null() {
            return Err(param_err("out is null"));
        }
        let sched = NoiseSchedule::linear(t, beta_start, beta_end).map_err(core_err)?;
        unsafe {
            *out = Box::into_raw(Box::new(TdSchedule { inner: sched }));
        }
        Ok(())
    })
}

/// Releases a schedule handle. Null is ignored.
#[no_mangle]
pub extern "C" fn td_schedule_free(s: *mut TdSchedule) {
    if !s.is_null() {
        drop(unsafe { Box::from_raw(s) });
    }
}

/// Number of steps T, or 0 for a null handle.
#[no_mangle]
pub extern "C" fn td_schedule_len(s: *const TdSchedule) -> usize {
    if s.is_null() {
        return 0;
    }
    unsafe { &*s }.inner.len()
}

/// Writes alpha_bar(t) (valid for t = 0..=T) to `out`.
#[no_mangle]
pub extern "C" fn td_schedule_alpha_bar(
    s: *const TdSchedule,
    t: usize,
    out: *mut f64,
) -> TdStatus {
    run(|| {
        if s.is_null() || out.is_null() {
            return Err(param_err("null pointer"));
        }
        let sched = &unsafe { &*s }.inner;
        if t > sched.len() {
            return Err(param_err("t out of range"));
        }
        unsafe { *out = sched.alpha_bar(t) };
        Ok(())
    })
}

/// Writes the ancestral noise scale sigma(t) (valid for t = 1..=T) to `out`.
#[no_mangle]
pub extern "C" fn td_schedule_sigma(s: *const TdSchedule, t: usize, out: *mut f64) -> TdStatus {
    run(|| {
        if s.is_null() || out.is_null() {
            return Err(param_err("null pointer"));
        }
        let v = unsafe { &*s }.inner.ddpm_sigma(t).map_err(core_err)?;
        unsafe { *out = v };
        Ok(())
    })
}

// --- mixture target --------------------------------------------------------

/// Opaque Gaussian-mixture target (diagonal covariance).
pub struct TdMixture {
    inner: GaussianMixture,
}

/// Creates a mixture of `k` components in dimension `d`. `weights` has k
/// entries; `means` and `variances` are row-major k×d.
#[no_mangle]
pub extern "C" fn td_mixture_new(
    k: usize,
    d: usize,
    weights: *const f64,
    means: *const f64,
    variances: *const f64,
    out: *mut *mut TdMixture,
) -> TdStatus {
    run(|| {
        if weights.is_null() || means.is_null() || variances.is_null() || out.is_null() {
            return Err(param_err("null pointer"));
        }
        if k == 0 || d == 0 {
            return Err(param_err("k and d must be positive"));
        }
        let w = unsafe { std::slice::from_raw_parts(weights, k) }.to_vec();
        let m = unsafe { std::slice::from_raw_parts(means, k * d) };
        let v = unsafe { std::slice::from_raw_parts(variances, k * d) };
        let means: Vec<Vec<f64>> = m.chunks(d).map(|c| c.to_vec()).collect();
        let vars: Vec<Vec<f64>> = v.chunks(d).map(|c| c.to_vec()).collect();
        let gm = GaussianMixture::new(w, means, vars).map_err(core_err)?;
        unsafe {
            *out = Box::into_raw(Box::new(TdMixture { inner: gm }));
        }
        Ok(())
    })
}

/// Releases a mixture handle. Null is ignored.
#[no_mangle]
pub extern "C" fn td_mixture_free(m: *mut TdMixture) {
    if !m.is_null() {
        drop(unsafe { Box::from_raw(m) });
    }
}

/// Draws n samples into `out_points` (row-major n×d). Deterministic in the
/// seed.
#[no_mangle]
pub extern "C" fn td_mixture_sample(
    m: *const TdMixture,
    n: usize,
    seed: u64,
    out_points: *mut f64,
) -> TdStatus {
    run(|| {
        if m.is_null() || out_points.is_null() {
            return Err(param_err("null pointer"));
        }
        let gm = &unsafe { &*m }.inner;
        let batch = gm.sample(n, seed).map_err(core_err)?;
        unsafe {
            std::slice::from_raw_parts_mut(out_points, n * gm.dim())
                .copy_from_slice(batch.as_slice());
        }
        Ok(())
    })
}

/// Optimal noise prediction for the mixture at a single point x (length d),
/// step t. Writes d values to `out_eps`.
#[no_mangle]
pub extern "C" fn td_analytic_eps(
    m: *const TdMixture,
    s: *const TdSchedule,
    x: *const f64,
    d: usize,
    t: usize,
    out_eps: *mut f64,
) -> TdStatus {
    run(|| {
        if m.is_null() || s.is_null() || x.is_null() || out_eps.is_null() {
            return Err(param_err("null pointer"));
        }
        let gm = &unsafe { &*m }.inner;
        if d != gm.dim() {
            return Err(param_err("d does not match mixture dimension"));
        }
        let point = unsafe { std::slice::from_raw_parts(x, d) };
        let eps = gm
            .analytic_eps(&unsafe { &*s }.inner, point, t)
            .map_err(core_err)?;
        unsafe { std::slice::from_raw_parts_mut(out_eps, d) }.copy_from_slice(&eps);
        Ok(())
    })
}

// --- sampling ---------------------------------------------------------------

/// Sampler kind selector for the chain entry points.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdSampler {
    Ddpm = 0,
    Ddim = 1,
}

fn spec_of(kind: TdSampler, t_start: usize, n_steps: usize) -> SamplerSpec {
    match kind {
        TdSampler::Ddpm => SamplerSpec {
            kind: SamplerKind::Ddpm,
            t_start,
            n_steps,
        },
        TdSampler::Ddim => SamplerSpec {
            kind: SamplerKind::Ddim,
            t_start,
            n_steps,
        },
    }
}

/// Runs a reverse chain with the mixture's analytic denoiser from pure
/// noise: start = standard normal (derived from child seed 0), chain noise
/// from child seed 1. Writes n×d values to `out_points`.
#[no_mangle]
pub extern "C" fn td_sample_chain(
    m: *const TdMixture,
    s: *const TdSchedule,
    kind: TdSampler,
    t_start: usize,
    n_steps: usize,
    n: usize,
    seed: u64,
    out_points: *mut f64,
) -> TdStatus {
    run(|| {
        if m.is_null() || s.is_null() || out_points.is_null() {
            return Err(param_err("null pointer"));
        }
        if n == 0 {
            return Err(param_err("n must be positive"));
        }
        let gm = &unsafe { &*m }.inner;
        let sched = &unsafe { &*s }.inner;
        let den = AnalyticDenoiser {
            mixture: gm,
            schedule: sched,
        };
        let start = SampleBatch::standard_normal(n, gm.dim(), child_seed(seed, 0));
        let spec = spec_of(kind, t_start, n_steps);
        let out = sample_chain(&den, None, &spec, &start, sched, child_seed(seed, 1))
            .map_err(core_err)?;
        unsafe {
            std::slice::from_raw_parts_mut(out_points, n * gm.dim())
                .copy_from_slice(out.as_slice());
        }
        Ok(())
    })
}

/// Truncation strategy with the analytic denoiser: embeds `coarse` (n×d) at
/// step `t_trunc` and refines it. `t_trunc = 0` copies the coarse points
/// unchanged.
#[no_mangle]
pub extern "C" fn td_truncated_sample(
    m: *const TdMixture,
    s: *const TdSchedule,
    kind: TdSampler,
    t_trunc: usize,
    n_steps: usize,
    coarse: *const f64,
    n: usize,
    seed: u64,
    out_points: *mut f64,
) -> TdStatus {
    run(|| {
        if m.is_null() || s.is_null() || coarse.is_null() || out_points.is_null() {
            return Err(param_err("null pointer"));
        }
        if n == 0 {
            return Err(param_err("n must be positive"));
        }
        let gm = &unsafe { &*m }.inner;
        let sched = &unsafe { &*s }.inner;
        let d = gm.dim();
        let coarse_slice = unsafe { std::slice::from_raw_parts(coarse, n * d) };
        let coarse_batch = SampleBatch::from_flat(n, d, coarse_slice.to_vec()).map_err(core_err)?;
        let den = AnalyticDenoiser {
            mixture: gm,
            schedule: sched,
        };
        let spec = spec_of(kind, t_trunc, n_steps);
        let out = truncated_sample(&coarse_batch, t_trunc, &spec, &den, None, sched, seed)
            .map_err(core_err)?;
        unsafe {
            std::slice::from_raw_parts_mut(out_points, n * d).copy_from_slice(out.as_slice());
        }
        Ok(())
    })
}

// --- metrics ----------------------------------------------------------------

/// Energy distance between two sample sets (row-major n×d and m×d).
#[no_mangle]
pub extern "C" fn td_energy_distance(
    a: *const f64,
    n: usize,
    b: *const f64,
    m: usize,
    d: usize,
    out: *mut f64,
) -> TdStatus {
    run(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(param_err("null pointer"));
        }
        if n == 0 || m == 0 || d == 0 {
            return Err(param_err("n, m and d must be positive"));
        }
        let av = unsafe { std::slice::from_raw_parts(a, n * d) };
        let bv = unsafe { std::slice::from_raw_parts(b, m * d) };
        let ab = SampleBatch::from_flat(n, d, av.to_vec()).map_err(core_err)?;
        let bb = SampleBatch::from_flat(m, d, bv.to_vec()).map_err(core_err)?;
        let e = energy_distance(&ab, &bb).map_err(core_err)?;
        unsafe { *out = e };
        Ok(())
    })
}

// --- blending ----------------------------------------------------------------

/// Linear solver selector for `td_poisson_blend`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdSolver {
    Cg = 0,
    Dense = 1,
}

/// Poisson-blends `f_star` with guidance gradients from `h` inside the
/// region where `omega` is nonzero. Images are row-major width×height
/// intensity buffers. `tol`/`max_iter` configure CG (`max_iter = 0` means
/// 10× the unknown count) and are ignored by the dense solver. Writes
/// width×height values to `out_pixels`; pixels outside the region are
/// copied from `f_star` bit-exactly.
#[no_mangle]
pub extern "C" fn td_poisson_blend(
    width: usize,
    height: usize,
    f_star: *const f64,
    h: *const f64,
    omega: *const u8,
    solver: TdSolver,
    tol: f64,
    max_iter: usize,
    out_pixels: *mut f64,
) -> TdStatus {
    run(|| {
        if f_star.is_null() || h.is_null() || omega.is_null() || out_pixels.is_null() {
            return Err(param_err("null pointer"));
        }
        let count = width * height;
        let fs = unsafe { std::slice::from_raw_parts(f_star, count) };
        let hs = unsafe { std::slice::from_raw_parts(h, count) };
        let om = unsafe { std::slice::from_raw_parts(omega, count) };
        let f_img = GrayImage::new(width, height, fs.to_vec()).map_err(core_err)?;
        let h_img = GrayImage::new(width, height, hs.to_vec()).map_err(core_err)?;
        let mask: Vec<bool> = om.iter().map(|v| *v != 0).collect();
        let unknowns = mask.iter().filter(|m| **m).count();
        let problem = BlendProblem::new(f_img, h_img, mask).map_err(core_err)?;
        let solver = match solver {
            TdSolver::Cg => Solver::Cg {
                tol,
                max_iter: if max_iter == 0 {
                    10 * unknowns.max(1)
                } else {
                    max_iter
                },
            },
            TdSolver::Dense => Solver::Dense,
        };
        let out = poisson_blend(&problem, solver).map_err(core_err)?;
        unsafe {
            std::slice::from_raw_parts_mut(out_pixels, count).copy_from_slice(out.pixels());
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_is_nul_terminated() {
        let p = td_version();
        let s = unsafe { std::ffi::CStr::from_ptr(p) };
        assert!(s.to_str().unwrap().starts_with("truncdiff "));
    }
}
