//! Closed forms against the adaptive integrator, and generator invariants on
//! random inputs.

use std::f64::consts::PI;

use cavity_rabi::closed_form::{opencavity_rho, phenom_t0_rho, scala_rho};
use cavity_rabi::entangle::{embed4, ppt_spectrum};
use cavity_rabi::evolve::{integrate_constant, Profile, RkOptions};
use cavity_rabi::linalg::{hermitian_eigen, partial_transpose, ComplexMatrix, DensityMatrix};
use cavity_rabi::models::{build_liouvillian, DecayRates, ModelKind, PhysicalParams, SimplifiedRates};
use cavity_rabi::presets;
use num_complex::Complex64;
use proptest::prelude::*;

const G: f64 = presets::COUPLING;

fn params() -> PhysicalParams {
    presets::params()
}

fn rk_state(kind: ModelKind, t: f64) -> DensityMatrix {
    let l = build_liouvillian(kind, &params()).unwrap();
    let traj = integrate_constant(&l, &DensityMatrix::excited_vacuum(), &[t], &RkOptions::tight()).unwrap();
    traj.states.into_iter().next().unwrap()
}

fn max_gap(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
    assert_eq!(a.basis(), b.basis());
    (a.matrix() - b.matrix()).max_abs()
}

#[test]
fn phenomenological_solution_at_20_us() {
    let gamma = 0.3 * G;
    let closed = phenom_t0_rho(G, gamma, 20e-6).unwrap().rho;
    assert!(max_gap(&closed, &rk_state(ModelKind::PhenomT0 { gamma }, 20e-6)) < 1e-8);
}

#[test]
fn dressed_solution_at_30_us() {
    let (g1, g2) = (0.1 * G, 0.05 * G);
    let closed = scala_rho(G, g1, g2, 30e-6).unwrap();
    let rk = rk_state(ModelKind::Microscopic { gamma1: g1, gamma2: g2 }, 30e-6);
    assert!(max_gap(&closed, &rk) < 1e-10);
}

#[test]
fn open_cavity_solution_at_25_us() {
    let rates = SimplifiedRates::new(17.73, 17.73, 0.07 * G, 0.0466).unwrap();
    let closed = opencavity_rho(&rates, &params(), 25e-6, &Profile::Constant).unwrap();
    assert!(!closed.fallback);
    let rk = rk_state(ModelKind::open_cavity(rates.expand()), 25e-6);
    assert!(max_gap(&closed.rho, &rk) < 1e-8);
}

#[test]
fn reductions_between_models() {
    let p = params();
    let gamma = 0.2 * G;
    let t0 = build_liouvillian(ModelKind::PhenomT0 { gamma }, &p).unwrap();
    let t = build_liouvillian(ModelKind::PhenomT { gamma_down: gamma, gamma_up: 0.0 }, &p).unwrap();
    assert_eq!(t0.matrix(), t.matrix());

    let (g1, g2) = (300.0, 120.0);
    let micro = build_liouvillian(ModelKind::Microscopic { gamma1: g1, gamma2: g2 }, &p).unwrap();
    let open = build_liouvillian(
        ModelKind::open_cavity(DecayRates {
            gamma1: g1,
            gamma2: g2,
            ..Default::default()
        }),
        &p,
    )
    .unwrap();
    assert_eq!(micro.matrix(), open.matrix());
}

fn random_state(entries: &[(f64, f64)], dim: usize) -> ComplexMatrix {
    let a = ComplexMatrix::from_rows(dim, entries.iter().map(|&(re, im)| Complex64::new(re, im)).collect()).unwrap();
    let m = &a * &a.dagger();
    m.scale(Complex64::new(1.0 / m.trace().re, 0.0))
}

fn any_kind() -> impl Strategy<Value = ModelKind> {
    let rate = 0.0f64..2e4;
    prop_oneof![
        rate.clone().prop_map(|gamma| ModelKind::PhenomT0 { gamma }),
        (rate.clone(), 0.0f64..1.0).prop_map(|(d, r)| ModelKind::PhenomT { gamma_down: d, gamma_up: r * d }),
        (rate.clone(), rate.clone()).prop_map(|(gamma1, gamma2)| ModelKind::Microscopic { gamma1, gamma2 }),
        proptest::array::uniform6(rate).prop_map(|r| ModelKind::open_cavity(DecayRates {
            gamma1: r[0],
            gamma2: r[1],
            gamma3: r[2],
            gamma_a: r[3],
            gamma_b: r[4],
            gamma_c: r[5],
        })),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generators_preserve_trace_and_hermiticity(
        kind in any_kind(),
        entries in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 9),
    ) {
        let l = build_liouvillian(kind, &params()).unwrap();
        let rho = random_state(&entries, 3);
        let image = ComplexMatrix::unvectorize(&l.rotating().apply(&rho.vectorize()));
        let scale = l.rotating().max_abs();
        prop_assert!(image.trace().norm() <= 1e-12 * scale);
        prop_assert!(image.hermiticity_defect() <= 1e-12 * scale);
    }

    #[test]
    fn eigen_reconstruction(
        dim in 1usize..=9,
        entries in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 81),
    ) {
        let a = ComplexMatrix::from_rows(dim, entries[..dim * dim].iter().map(|&(re, im)| Complex64::new(re, im)).collect()).unwrap();
        let h = (&a + &a.dagger()).scale(Complex64::new(0.5, 0.0));
        let eig = hermitian_eigen(&h).unwrap();
        prop_assert!((&eig.reconstruct() - &h).max_abs() <= 1e-10);
        prop_assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn partial_transpose_is_an_involution(
        entries in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 16),
    ) {
        let rho = random_state(&entries, 4);
        let twice = partial_transpose(&partial_transpose(&rho).unwrap()).unwrap();
        prop_assert_eq!(twice, rho);
    }

    #[test]
    fn open_cavity_states_are_valid_with_consistent_ppt_spectrum(
        g1 in 1.0f64..2e3,
        g3 in 1.0f64..2e4,
        eps in 0.0f64..0.1,
        t_us in 0.0f64..500.0,
    ) {
        let rates = SimplifiedRates::new(g1, g1, g3, eps).unwrap();
        let state = opencavity_rho(&rates, &params(), t_us * 1e-6, &Profile::Constant).unwrap();
        let validity = state.rho.validity();
        prop_assert!(validity.within(1e-9));
        let embedded = embed4(&state.rho).unwrap();
        let spectrum = ppt_spectrum(&embedded).unwrap();
        prop_assert!(spectrum.lambda[3] <= 0.0);
        let brute = hermitian_eigen(&partial_transpose(embedded.matrix()).unwrap()).unwrap().values;
        prop_assert!((brute[3] - spectrum.min()).abs() <= 1e-10);
    }
}

#[test]
fn zero_rate_open_cavity_is_unitary_rabi() {
    let rates = SimplifiedRates::new(0.0, 0.0, 0.0, 0.0).unwrap();
    for k in 0..20 {
        let t = k as f64 * 0.37 * PI / G;
        let state = opencavity_rho(&rates, &params(), t, &Profile::Constant).unwrap();
        let pg = cavity_rabi::models::ground_probability(&state.rho);
        assert!((pg - (G * t).sin().powi(2)).abs() < 1e-12);
    }
}
