//! C ABI over `bwgan-core`.
//!
//! Every fallible function returns a [`BwganStatus`] and writes results
//! through out-pointers. On failure a human-readable message is kept per
//! thread and can be copied out with [`bwgan_last_error_message`]. Spaces and
//! critics are opaque heap handles released with their `_free` function.
//! Panics never cross the boundary; they surface as `BWGAN_STATUS_PANIC`.

// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use bwgan_core::bwgan::{heuristics, optimal_constant_c};
use bwgan_core::checkpoint::Checkpoint;
use bwgan_core::lipschitz::grad_dual_norm;
use bwgan_core::nn::CriticHandle;
use bwgan_core::spaces::{dual_exponent, Geometry, GridSignal, Measure, SpaceSpec};
use bwgan_core::transport::{wasserstein_p_exact, DiscreteMeasure};
use bwgan_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BwganStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    DualUndefined = 4,
    WeightSum = 5,
    Io = 6,
    Format = 7,
    Numerical = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BwganMeasure {
    Counting = 0,
    Normalized = 1,
}

/// Channel × height × width layout of one signal.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BwganGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Opaque normed space.
pub struct BwganSpace(SpaceSpec);

/// Opaque scalar critic network.
pub struct BwganCritic(CriticHandle);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> BwganStatus {
    match e {
        Error::Shape { .. } | Error::NonScalarOutput { .. } => BwganStatus::ShapeMismatch,
        Error::DualUndefined(_) => BwganStatus::DualUndefined,
        Error::WeightSum(_) => BwganStatus::WeightSum,
        Error::Io(_) => BwganStatus::Io,
        Error::Format(_) => BwganStatus::Format,
        Error::ImaginaryResidue(_) | Error::Divergence { .. } => BwganStatus::Numerical,
        _ => BwganStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BwganStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BwganStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            BwganStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            BwganStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn values<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn geometry(g: BwganGeometry) -> Result<Geometry, Failure> {
    Ok(Geometry::new(g.channels, g.height, g.width)?)
}

unsafe fn signal(g: BwganGeometry, p: *const f64, what: &'static str) -> Result<GridSignal, Failure> {
    let geom = geometry(g)?;
    Ok(GridSignal::new(geom, values(p, geom.len(), what)?.to_vec())?)
}

fn measure(m: BwganMeasure) -> Measure {
    match m {
        BwganMeasure::Counting => Measure::Counting,
        BwganMeasure::Normalized => Measure::Normalized,
    }
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len` bytes) and returns the full message length
/// excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn bwgan_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Hölder conjugate `q = p/(p−1)`; fails unless `1 < p < ∞`.
///
/// # Safety
/// `q` must be a valid pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn bwgan_dual_exponent(p: f64, q: *mut f64) -> BwganStatus {
    guard(|| {
        *out(q, "q")? = dual_exponent(p)?;
        Ok(())
    })
}

/// Creates an `L^p` space.
///
/// # Safety
/// `space` must be a valid pointer; on success it receives a handle to free
/// with [`bwgan_space_free`].
#[no_mangle]
pub unsafe extern "C" fn bwgan_space_lp(p: f64, m: BwganMeasure, space: *mut *mut BwganSpace) -> BwganStatus {
    guard(|| {
        let slot = out(space, "space")?;
        if !(p >= 1.0) {
            return Err(Error::InvalidParameter(format!("p must be >= 1, got {p}")).into());
        }
        *slot = boxed(BwganSpace(SpaceSpec::Lp { p, measure: measure(m) }));
        Ok(())
    })
}

/// Creates a Sobolev space `W^{s,p}` with the given per-axis frequency bound.
///
/// # Safety
/// As for [`bwgan_space_lp`].
#[no_mangle]
pub unsafe extern "C" fn bwgan_space_sobolev(
    p: f64,
    s: f64,
    frequency_scale: f64,
    m: BwganMeasure,
    space: *mut *mut BwganSpace,
) -> BwganStatus {
    guard(|| {
        let slot = out(space, "space")?;
        if !(p >= 1.0 && s.is_finite() && frequency_scale > 0.0) {
            return Err(Error::InvalidParameter("need p >= 1, finite s, positive frequency_scale".into()).into());
        }
        *slot = boxed(BwganSpace(SpaceSpec::Sobolev {
            p,
            s,
            frequency_scale,
            measure: measure(m),
        }));
        Ok(())
    })
}

/// Weighted space `‖x‖ = ‖w ⊙ x‖_base`. The base handle is copied and
/// remains owned by the caller.
///
/// # Safety
/// `base` must be a live handle, `weights` must point to `len` doubles and
/// `space` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bwgan_space_weighted(
    base: *const BwganSpace,
    weights: *const f64,
    len: usize,
    space: *mut *mut BwganSpace,
) -> BwganStatus {
    guard(|| {
        let slot = out(space, "space")?;
        let base = deref(base, "base")?;
        let w = values(weights, len, "weights")?.to_vec();
        *slot = boxed(BwganSpace(SpaceSpec::weighted(base.0.clone(), w)?));
        Ok(())
    })
}

/// The dual space as a new handle.
///
/// # Safety
/// `space` must be a live handle and `dual` writable.
#[no_mangle]
pub unsafe extern "C" fn bwgan_space_dual(space: *const BwganSpace, dual: *mut *mut BwganSpace) -> BwganStatus {
    guard(|| {
        let slot = out(dual, "dual")?;
        *slot = boxed(BwganSpace(deref(space, "space")?.0.dual_space()?));
        Ok(())
    })
}

/// Releases a space handle; null is ignored.
///
/// # Safety
/// `space` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bwgan_space_free(space: *mut BwganSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

/// `‖x‖_B` for a signal of `channels·height·width` doubles.
///
/// # Safety
/// `space` must be live, `x` must point to the full signal, `result` writable.
#[no_mangle]
pub unsafe extern "C" fn bwgan_norm(
    space: *const BwganSpace,
    geom: BwganGeometry,
    x: *const f64,
    result: *mut f64,
) -> BwganStatus {
    guard(|| {
        let r = out(result, "result")?;
        *r = deref(space, "space")?.0.norm(&signal(geom, x, "x")?)?;
        Ok(())
    })
}

/// `‖g‖_{B*}` of coordinates `g` under the coordinate pairing.
///
/// # Safety
/// As for [`bwgan_norm`].
#[no_mangle]
pub unsafe extern "C" fn bwgan_dual_norm(
    space: *const BwganSpace,
    geom: BwganGeometry,
    g: *const f64,
    result: *mut f64,
) -> BwganStatus {
    guard(|| {
        let r = out(result, "result")?;
        *r = deref(space, "space")?.0.dual_norm(&signal(geom, g, "g")?)?;
        Ok(())
    })
}

/// Writes a nonzero `x` with `⟨g, x⟩ = ‖g‖_{B*}‖x‖_B` into `x_out`.
///
/// # Safety
/// `g` and `x_out` must each hold the full signal length.
#[no_mangle]
pub unsafe extern "C" fn bwgan_dual_maximizer(
    space: *const BwganSpace,
    geom: BwganGeometry,
    g: *const f64,
    x_out: *mut f64,
) -> BwganStatus {
    guard(|| {
        let g = signal(geom, g, "g")?;
        if x_out.is_null() {
            return Err(Failure::Null("x_out"));
        }
        let x = deref(space, "space")?.0.dual_maximizer(&g)?;
        ptr::copy_nonoverlapping(x.values().as_ptr(), x_out, x.len());
        Ok(())
    })
}

unsafe fn discrete(
    geom: Geometry,
    points: *const f64,
    weights: *const f64,
    count: usize,
    what: &'static str,
) -> Result<DiscreteMeasure, Failure> {
    let n = geom.len();
    let coords = values(points, count * n, what)?;
    let w = values(weights, count, "weights")?.to_vec();
    let pts = coords
        .chunks(n)
        .map(|c| GridSignal::new(geom, c.to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DiscreteMeasure::new(pts, w)?)
}

/// Exact `W_p` between two discrete measures. Points are stored row-major,
/// one signal per row; weights must each sum to 1.
///
/// # Safety
/// `a_points` holds `a_count` signals and `a_weights` `a_count` doubles;
/// likewise for `b`. `result` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn bwgan_wasserstein(
    space: *const BwganSpace,
    geom: BwganGeometry,
    a_points: *const f64,
    a_weights: *const f64,
    a_count: usize,
    b_points: *const f64,
    b_weights: *const f64,
    b_count: usize,
    p: f64,
    result: *mut f64,
) -> BwganStatus {
    guard(|| {
        let r = out(result, "result")?;
        let g = geometry(geom)?;
        let mu = discrete(g, a_points, a_weights, a_count, "a_points")?;
        let nu = discrete(g, b_points, b_weights, b_count, "b_points")?;
        *r = wasserstein_p_exact(&mu, &nu, &deref(space, "space")?.0, p)?.distance;
        Ok(())
    })
}

/// Heuristic `λ = E‖X‖_B` and `γ = E‖X‖_{B*}` over `count` samples.
///
/// # Safety
/// `samples` holds `count` signals; `lambda` and `gamma` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bwgan_heuristics(
    space: *const BwganSpace,
    geom: BwganGeometry,
    samples: *const f64,
    count: usize,
    lambda: *mut f64,
    gamma: *mut f64,
) -> BwganStatus {
    guard(|| {
        let (l, g) = (out(lambda, "lambda")?, out(gamma, "gamma")?);
        let geo = geometry(geom)?;
        let xs = values(samples, count * geo.len(), "samples")?
            .chunks(geo.len())
            .map(|c| GridSignal::new(geo, c.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        let h = heuristics(&xs, &deref(space, "space")?.0)?;
        *l = h.lambda;
        *g = h.gamma;
        Ok(())
    })
}

/// `c = γ(1 + m/(2λ))`.
///
/// # Safety
/// `c` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bwgan_optimal_constant_c(gamma: f64, lambda: f64, mean_norm: f64, c: *mut f64) -> BwganStatus {
    guard(|| {
        *out(c, "c")? = optimal_constant_c(gamma, lambda, mean_norm)?;
        Ok(())
    })
}

/// Loads an MLP critic from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `critic` must be writable and
/// receives a handle to free with [`bwgan_critic_free`].
#[no_mangle]
pub unsafe extern "C" fn bwgan_critic_load(path: *const c_char, critic: *mut *mut BwganCritic) -> BwganStatus {
    guard(|| {
        let slot = out(critic, "critic")?;
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::Format("path is not UTF-8".into()))?;
        *slot = boxed(BwganCritic(Checkpoint::load(path)?.critic()?));
        Ok(())
    })
}

/// Releases a critic handle; null is ignored.
///
/// # Safety
/// `critic` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bwgan_critic_free(critic: *mut BwganCritic) {
    if !critic.is_null() {
        drop(Box::from_raw(critic));
    }
}

/// Number of doubles the critic expects per input signal.
///
/// # Safety
/// `critic` must be live and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn bwgan_critic_input_len(critic: *const BwganCritic, len: *mut usize) -> BwganStatus {
    guard(|| {
        *out(len, "len")? = deref(critic, "critic")?.0.input_len();
        Ok(())
    })
}

/// Evaluates the critic on `count` flat inputs, writing `count` scores.
///
/// # Safety
/// `x` holds `count · input_len` doubles and `scores` has room for `count`.
#[no_mangle]
pub unsafe extern "C" fn bwgan_critic_eval(
    critic: *const BwganCritic,
    x: *const f64,
    count: usize,
    scores: *mut f64,
) -> BwganStatus {
    guard(|| {
        let c = &deref(critic, "critic")?.0;
        let n = c.input_len();
        let xs: Vec<GridSignal> = values(x, count * n, "x")?
            .chunks(n)
            .map(|v| GridSignal::flat(v.to_vec()))
            .collect();
        if count == 0 {
            return Ok(());
        }
        if scores.is_null() {
            return Err(Failure::Null("scores"));
        }
        let v = c.values(&xs)?;
        ptr::copy_nonoverlapping(v.as_ptr(), scores, v.len());
        Ok(())
    })
}

/// `‖∂D(x)‖_{B*}` at one input laid out as `geom`.
///
/// # Safety
/// `critic` and `space` must be live, `x` must hold one signal, `result`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn bwgan_critic_grad_dual_norm(
    critic: *const BwganCritic,
    space: *const BwganSpace,
    geom: BwganGeometry,
    x: *const f64,
    result: *mut f64,
) -> BwganStatus {
    guard(|| {
        let r = out(result, "result")?;
        let c = &deref(critic, "critic")?.0;
        *r = grad_dual_norm(c, &deref(space, "space")?.0, &signal(geom, x, "x")?)?;
        Ok(())
    })
}
