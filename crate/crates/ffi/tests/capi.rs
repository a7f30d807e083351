use std::ffi::CStr;
use std::ptr;

use cavity_rabi::closed_form::opencavity_pg;
use cavity_rabi::evolve::Profile;
use cavity_rabi::models::SimplifiedRates;
use cavity_rabi::presets;
use cavity_rabi_ffi::*;

fn last_error() -> String {
    let p = cr_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn preset() -> *mut CrModel {
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { cr_model_preset(&mut model) }, CrStatus::Ok);
    model
}

#[test]
fn preset_model_matches_library() {
    let model = preset();
    let profile = Profile::Gaussian {
        geometry: presets::geometry(),
    };
    for t in [0.0, 12e-6, 97e-6, 430e-6] {
        let mut pg = f64::NAN;
        assert_eq!(unsafe { cr_ground_probability(model, t, &mut pg) }, CrStatus::Ok);
        assert_eq!(pg, opencavity_pg(&presets::rates(), &presets::params(), t, &profile).unwrap());

        let mut convolved = f64::NAN;
        let status = unsafe { cr_ground_probability_convolved(model, 2e-6, t.max(1e-6), &mut convolved) };
        assert_eq!(status, CrStatus::Ok);
        assert!((0.0..=1.0).contains(&convolved));
    }
    unsafe { cr_model_free(model) };
}

#[test]
fn density_matrix_is_a_state() {
    let model = preset();
    let (mut re, mut im) = ([0.0; 9], [0.0; 9]);
    let status = unsafe { cr_density_matrix(model, 40e-6, re.as_mut_ptr(), im.as_mut_ptr()) };
    assert_eq!(status, CrStatus::Ok);
    assert!((re[0] + re[4] + re[8] - 1.0).abs() < 1e-12);
    for i in 0..3 {
        assert_eq!(im[4 * i], 0.0);
        for j in 0..3 {
            assert!((re[3 * i + j] - re[3 * j + i]).abs() < 1e-14);
            assert!((im[3 * i + j] + im[3 * j + i]).abs() < 1e-14);
        }
    }
    let mut pg = 0.0;
    unsafe { cr_ground_probability(model, 40e-6, &mut pg) };
    assert!((re[4] + re[8] - pg).abs() < 1e-12);
    unsafe { cr_model_free(model) };
}

#[test]
fn custom_model_and_setters() {
    let g = presets::COUPLING;
    let mut model = ptr::null_mut();
    let status = unsafe { cr_model_new(presets::RESONANCE, g, 0.0, 900.0, 400.0, 0.0, &mut model) };
    assert_eq!(status, CrStatus::Ok);

    let mut energy = 0.0;
    assert_eq!(unsafe { cr_energy(model, 0.0, &mut energy) }, CrStatus::Ok);
    assert!((energy / (presets::RESONANCE / 2.0) - 1.0).abs() < 1e-12);

    assert_eq!(unsafe { cr_model_set_eps(model, 0.02) }, CrStatus::Ok);
    assert_eq!(unsafe { cr_model_set_gaussian(model, 6e-3, 50e-3, 0.0) }, CrStatus::Ok);
    let mut pg = 0.0;
    assert_eq!(unsafe { cr_ground_probability(model, 50e-6, &mut pg) }, CrStatus::Ok);
    let rates = SimplifiedRates::new(900.0, 400.0, 0.0, 0.02).unwrap();
    let geometry = cavity_rabi::evolve::CavityGeometry::new(6e-3, 50e-3, None).unwrap();
    let expected = opencavity_pg(&rates, &presets::params(), 50e-6, &Profile::Gaussian { geometry }).unwrap();
    assert!((pg - expected).abs() < 1e-15);

    assert_eq!(unsafe { cr_model_set_constant(model) }, CrStatus::Ok);
    let mut lam = 1.0;
    assert_eq!(unsafe { cr_min_ppt_eigenvalue(model, 50e-6, &mut lam) }, CrStatus::Ok);
    assert!(lam <= 0.0);
    unsafe { cr_model_free(model) };
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut model = ptr::null_mut();
    let status = unsafe { cr_model_new(1.0, -3.0, 0.0, 1.0, 1.0, 1.0, &mut model) };
    assert_eq!(status, CrStatus::Validation);
    assert!(model.is_null());
    assert!(last_error().contains("g must be positive"));

    let model = preset();
    assert_eq!(unsafe { cr_model_set_eps(model, -1.0) }, CrStatus::Validation);
    let mut pg = 0.0;
    assert_eq!(unsafe { cr_ground_probability(model, -1e-6, &mut pg) }, CrStatus::Validation);
    assert_eq!(unsafe { cr_ground_probability(model, 1e-6, ptr::null_mut()) }, CrStatus::NullPointer);
    assert_eq!(unsafe { cr_ground_probability(ptr::null(), 1e-6, &mut pg) }, CrStatus::NullPointer);
    assert!(last_error().contains("null"));
    unsafe { cr_model_free(model) };
    unsafe { cr_model_free(ptr::null_mut()) };
}

#[test]
fn thermal_helpers() {
    let w = presets::RESONANCE;
    let (mut eps, mut nbar) = (0.0, 0.0);
    assert_eq!(unsafe { cr_kms_ratio(w, 0.8, &mut eps) }, CrStatus::Ok);
    assert_eq!(unsafe { cr_thermal_occupation(w, 0.8, &mut nbar) }, CrStatus::Ok);
    assert!((nbar - eps / (1.0 - eps)).abs() < 1e-15);
    assert_eq!(eps, presets::params().epsilon());
    assert_eq!(unsafe { cr_kms_ratio(w, -1.0, &mut eps) }, CrStatus::Validation);
}

#[test]
fn header_declares_the_interface() {
    let header = include_str!("../include/cavity_rabi.h");
    for name in [
        "typedef struct CrModel CrModel;",
        "CR_STATUS_NULL_POINTER = 1",
        "cr_model_new(",
        "cr_model_free(",
        "cr_density_matrix(",
        "cr_last_error_message(void)",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
    let version = unsafe { CStr::from_ptr(cr_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
