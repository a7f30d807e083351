//! C interface to the open-cavity model.
//!
//! A [`CrModel`] handle bundles the physical parameters, the three decay
//! rates and the coupling profile. Every fallible call returns a
//! [`CrStatus`] and writes its result through an out-pointer; on failure the
//! message is available from [`cr_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cavity_rabi::closed_form::{energy_mean, opencavity_pg, opencavity_rho};
use cavity_rabi::dephase::{convolve_energy, convolve_pg};
use cavity_rabi::entangle::lambda4;
use cavity_rabi::evolve::{CavityGeometry, Profile};
use cavity_rabi::linalg::Basis;
use cavity_rabi::models::{dressed_transform, kms_ratio, thermal_occupation, PhysicalParams, SimplifiedRates};
use cavity_rabi::{presets, Error};

/// Result code of every fallible call.
#[repr(i32)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrStatus {
    Ok = 0,
    NullPointer = 1,
    Validation = 2,
    NonConvergence = 3,
    Numerical = 4,
    Panic = 5,
}

/// Opaque model handle. Create with [`cr_model_new`] or [`cr_model_preset`],
/// release with [`cr_model_free`].
pub struct CrModel {
    params: PhysicalParams,
    rates: SimplifiedRates,
    profile: Profile,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

fn status_of(err: &Error) -> CrStatus {
    match err {
        Error::Validation(_) | Error::Parse { .. } | Error::MissingWeight { .. } => CrStatus::Validation,
        Error::NonConvergence { .. } => CrStatus::NonConvergence,
        _ => CrStatus::Numerical,
    }
}

/// Runs `body`, storing its value in `out` and turning errors and panics
/// into status codes.
fn guarded<T>(out: *mut T, body: impl FnOnce() -> cavity_rabi::Result<T>) -> CrStatus {
    if out.is_null() {
        set_last_error("output pointer is null".into());
        return CrStatus::NullPointer;
    }
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(value)) => {
            // SAFETY: checked non-null above; the caller guarantees it is writable.
            unsafe { out.write(value) };
            CrStatus::Ok
        }
        Ok(Err(err)) => {
            let status = status_of(&err);
            set_last_error(err.to_string());
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            CrStatus::Panic
        }
    }
}

/// # Safety
/// `model` must be null or a live handle from this library.
unsafe fn model_ref<'a>(model: *const CrModel) -> Option<&'a CrModel> {
    let found = model.as_ref();
    if found.is_none() {
        set_last_error("model handle is null".into());
    }
    found
}

/// Builds a model at temperature-derived KMS ratio. Rates are in 1/s,
/// frequencies in rad/s, temperature in K. The profile starts constant.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn cr_model_new(
    omega0: f64,
    g: f64,
    temperature: f64,
    gamma1: f64,
    gamma2: f64,
    gamma3: f64,
    out: *mut *mut CrModel,
) -> CrStatus {
    guarded(out, || {
        let params = PhysicalParams::new(omega0, g, temperature)?;
        let rates = SimplifiedRates::new(gamma1, gamma2, gamma3, params.epsilon())?;
        Ok(Box::into_raw(Box::new(CrModel {
            params,
            rates,
            profile: Profile::Constant,
        })))
    })
}

/// Model at the calibrated experiment values with the Gaussian profile.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn cr_model_preset(out: *mut *mut CrModel) -> CrStatus {
    guarded(out, || {
        Ok(Box::into_raw(Box::new(CrModel {
            params: presets::params(),
            rates: presets::rates(),
            profile: Profile::Gaussian {
                geometry: presets::geometry(),
            },
        })))
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cr_model_free(model: *mut CrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Overrides the upward-rate ratio derived from the temperature.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cr_model_set_eps(model: *mut CrModel, eps: f64) -> CrStatus {
    let Some(m) = model.as_mut() else {
        set_last_error("model handle is null".into());
        return CrStatus::NullPointer;
    };
    let mut unit = ();
    guarded(&mut unit, || {
        let r = m.rates;
        m.rates = SimplifiedRates::new(r.gamma1, r.gamma2, r.gamma3, eps)?;
        Ok(())
    })
}

/// Switches to the Gaussian mode profile. Lengths in metres; a velocity of
/// zero or less means "one diameter per run".
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cr_model_set_gaussian(model: *mut CrModel, waist: f64, diameter: f64, velocity: f64) -> CrStatus {
    let Some(m) = model.as_mut() else {
        set_last_error("model handle is null".into());
        return CrStatus::NullPointer;
    };
    let mut unit = ();
    guarded(&mut unit, || {
        let velocity = (velocity > 0.0).then_some(velocity);
        m.profile = Profile::Gaussian {
            geometry: CavityGeometry::new(waist, diameter, velocity)?,
        };
        Ok(())
    })
}

/// Switches back to a constant coupling.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cr_model_set_constant(model: *mut CrModel) -> CrStatus {
    let Some(m) = model.as_mut() else {
        set_last_error("model handle is null".into());
        return CrStatus::NullPointer;
    };
    m.profile = Profile::Constant;
    CrStatus::Ok
}

/// Ground-state probability at time `t` (s) from |e,0⟩.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cr_ground_probability(model: *const CrModel, t: f64, out: *mut f64) -> CrStatus {
    let Some(m) = model_ref(model) else {
        return CrStatus::NullPointer;
    };
    guarded(out, || opencavity_pg(&m.rates, &m.params, t, &m.profile))
}

/// Ground-state probability averaged over a timing uncertainty `delta_t` (s).
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cr_ground_probability_convolved(
    model: *const CrModel,
    delta_t: f64,
    t: f64,
    out: *mut f64,
) -> CrStatus {
    let Some(m) = model_ref(model) else {
        return CrStatus::NullPointer;
    };
    guarded(out, || convolve_pg(&m.rates, &m.params, &m.profile, delta_t, t))
}

/// Mean energy (rad/s) at time `t`. Uses a constant coupling.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cr_energy(model: *const CrModel, t: f64, out: *mut f64) -> CrStatus {
    let Some(m) = model_ref(model) else {
        return CrStatus::NullPointer;
    };
    guarded(out, || energy_mean(&m.rates, &m.params, t))
}

/// Mean energy averaged over a timing uncertainty `delta_t` (s).
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cr_energy_convolved(model: *const CrModel, delta_t: f64, t: f64, out: *mut f64) -> CrStatus {
    let Some(m) = model_ref(model) else {
        return CrStatus::NullPointer;
    };
    guarded(out, || convolve_energy(&m.rates, &m.params, delta_t, t))
}

/// Smallest eigenvalue of the partial transpose; negative means entangled.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cr_min_ppt_eigenvalue(model: *const CrModel, t: f64, out: *mut f64) -> CrStatus {
    let Some(m) = model_ref(model) else {
        return CrStatus::NullPointer;
    };
    guarded(out, || lambda4(&m.rates, &m.params, t, &m.profile))
}

/// Writes the 3×3 density matrix at time `t` in row-major order over
/// |e,0⟩, |g,1⟩, |g,0⟩ into `re[9]` and `im[9]`.
///
/// # Safety
/// `model` must be a live handle; `re` and `im` must each hold 9 doubles.
#[no_mangle]
pub unsafe extern "C" fn cr_density_matrix(model: *const CrModel, t: f64, re: *mut f64, im: *mut f64) -> CrStatus {
    let Some(m) = model_ref(model) else {
        return CrStatus::NullPointer;
    };
    if re.is_null() || im.is_null() {
        set_last_error("output pointer is null".into());
        return CrStatus::NullPointer;
    }
    let mut entries = [(0.0, 0.0); 9];
    let status = guarded(&mut entries, || {
        let state = opencavity_rho(&m.rates, &m.params, t, &m.profile)?.rho;
        let bare = match state.basis() {
            Basis::Bare => state,
            _ => dressed_transform(&state, Basis::Bare)?,
        };
        let mut flat = [(0.0, 0.0); 9];
        for (slot, z) in flat.iter_mut().zip(bare.matrix().entries()) {
            *slot = (z.re, z.im);
        }
        Ok(flat)
    });
    if status == CrStatus::Ok {
        for (k, &(a, b)) in entries.iter().enumerate() {
            re.add(k).write(a);
            im.add(k).write(b);
        }
    }
    status
}

/// The coupling does not enter the thermal factors; any valid value will do.
fn thermal_params(omega: f64, temperature: f64) -> cavity_rabi::Result<PhysicalParams> {
    PhysicalParams::new(omega, 1.0, temperature)
}

/// `exp(−ħω/kT)` for `omega` in rad/s and `temperature` in K.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cr_kms_ratio(omega: f64, temperature: f64, out: *mut f64) -> CrStatus {
    guarded(out, || {
        let params = thermal_params(omega, temperature)?;
        Ok(kms_ratio(omega, &params))
    })
}

/// Mean photon number of a thermal mode at `omega` (rad/s), `temperature` (K).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cr_thermal_occupation(omega: f64, temperature: f64, out: *mut f64) -> CrStatus {
    guarded(out, || {
        let params = thermal_params(omega, temperature)?;
        Ok(thermal_occupation(omega, &params))
    })
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cr_version() -> *const c_char {
    const VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version contains NUL"),
    };
    VERSION.as_ptr()
}
