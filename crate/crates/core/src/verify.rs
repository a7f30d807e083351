//! Built-in verification suite: fourteen quantitative checks run by the
//! `verify` command and by the acceptance test target.

use std::fmt;
use std::sync::OnceLock;

use rayon::prelude::*;
use statrs::function::erf::erf;

use crate::closed_form::{damping_basis, GroundTerms, energy_mean, opencavity_pg, phenom_t0_rho, scala_pg};
use crate::dephase::{convolve_energy, convolve_numeric, convolve_pg};
use crate::davies::{assemble_generator, davies_decompose, truncate_to_subspace, SpectralWeights};
use crate::entangle::{embed4, envelope_decay_rate, lambda4, ppt_spectrum};
use crate::error::Result;
use crate::evolve::{
    effective_time, integrate_constant, nstep_series, Profile, RkOptions, Trajectory,
};
use crate::fitting::{
    fit_q, fit_rabi, rate_from_q, ExperimentSeries, FreeParam, LmOptions, RabiFitSpec, RabiModel,
    SeriesPoint, TimeConvention,
};
use crate::linalg::{c, hermitian_eigen, partial_transpose, ComplexMatrix, DensityMatrix, TRAJECTORY_TOL};
use crate::models::{
    build_liouvillian, ground_probability, kms_ratio, thermal_occupation, DecayRates, ModelKind,
    PhysicalParams, SimplifiedRates,
};
use crate::presets;

pub const CHECK_COUNT: usize = 14;

/// Epsilon quoted for the experiment, used where a check pins it.
const QUOTED_EPS: f64 = 0.0466;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{mark} {:>2} {:<24} {}", self.id, self.name, self.detail)
    }
}

const NAMES: [&str; CHECK_COUNT] = [
    "kms factor",
    "thermal occupation",
    "asymptote",
    "population trapping",
    "q translation",
    "effective time",
    "oracle equivalence",
    "n-step convergence",
    "convolution",
    "damping basis",
    "davies equivalence",
    "separability",
    "fit roundtrips",
    "trajectory hygiene",
];

/// Runs check `id` (1-based). Errors inside a check count as failures.
pub fn run_check(id: usize) -> CheckOutcome {
    assert!((1..=CHECK_COUNT).contains(&id), "no check {id}");
    let result = match id {
        1 => kms_factor(),
        2 => occupation(),
        3 => asymptote(),
        4 => trapping(),
        5 => q_translation(),
        6 => effective_time_factor(),
        7 => oracle_equivalence(),
        8 => nstep_convergence(),
        9 => convolution(),
        10 => damping_basis_pairs(),
        11 => davies_equivalence(),
        12 => separability(),
        13 => fit_roundtrips(),
        _ => hygiene(),
    };
    let (passed, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckOutcome {
        id,
        name: NAMES[id - 1],
        passed,
        detail,
    }
}

/// All checks, in order. Independent checks run concurrently.
pub fn run_all() -> Vec<CheckOutcome> {
    (1..=CHECK_COUNT).into_par_iter().map(run_check).collect()
}

type Verdict = Result<(bool, String)>;

fn kms_factor() -> Verdict {
    let p = presets::params();
    let eps = kms_ratio(presets::RESONANCE, &p);
    let err = (eps - 0.0466327).abs();
    Ok((err <= 1e-5, format!("eps = {eps:.7} (|err| {err:.1e}, tol 1e-5)")))
}

fn occupation() -> Verdict {
    let p = presets::params();
    let low = thermal_occupation(2.0 * p.g(), &p);
    let high = thermal_occupation(p.omega0(), &p);
    let ok = (low - 354_666.0).abs() <= 50.0 && (high - 0.05).abs() <= 0.005;
    Ok((ok, format!("n(2g) = {low:.1} (tol 50), n(w0) = {high:.4} (tol 0.005)")))
}

fn asymptote() -> Verdict {
    let p = presets::params();
    let rates = SimplifiedRates::new(presets::CAVITY_RATE, presets::CAVITY_RATE, presets::INTRA_RATE_RATIO * p.g(), QUOTED_EPS)?;
    let basis = damping_basis(&rates.expand())?;
    let slowest = basis
        .eigenvalues(0.0, p.g())
        .iter()
        .skip(1)
        .map(|l| -l.re)
        .fold(f64::INFINITY, f64::min);
    let t = 40.0 / slowest;
    let value = opencavity_pg(&rates, &p, t, &Profile::Constant)?;
    let exact = (1.0 + QUOTED_EPS) / (1.0 + 2.0 * QUOTED_EPS);
    let ok = (value - 0.957).abs() <= 1e-3 && (value - exact).abs() <= 1e-3;
    Ok((ok, format!("p_g({t:.3} s) = {value:.6}, (1+e)/(1+2e) = {exact:.6} (tol 1e-3)")))
}

fn trapping() -> Verdict {
    let gamma1 = presets::CAVITY_RATE;
    let t = 20.0 / gamma1;
    let value = scala_pg(presets::COUPLING, gamma1, 0.0, t);
    let err = (value - 0.75).abs();
    // the coherent term still carries ½e^{−γ₁t/4} = ½e^{−5} at this time
    let bound = 0.25 * (-10.0f64).exp() + 0.5 * (-5.0f64).exp();
    Ok((
        err <= 1e-4,
        format!("p_g(20/g1) = {value:.6}, |err| {err:.2e} (tol 1e-4, envelope {bound:.2e})"),
    ))
}

fn q_translation() -> Verdict {
    let p = presets::params();
    let rates = SimplifiedRates::new(presets::CAVITY_RATE, presets::CAVITY_RATE, presets::INTRA_RATE_RATIO * p.g(), QUOTED_EPS)?;
    let samples = (0..=430)
        .map(|k| {
            let t = k as f64 * 1e-3;
            Ok((t, energy_mean(&rates, &p, t)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let q = fit_q(&samples, QUOTED_EPS, p.omega0(), TimeConvention::True)?.q;
    let geom = presets::geometry();
    let gamma = rate_from_q(7e7, QUOTED_EPS, p.omega0(), TimeConvention::Effective, &geom);
    let analytic = 2.0 * p.omega0() * geom.effective_factor() / (7e7 * (2.0 * QUOTED_EPS + 1.0));
    let ok = (q / 3.31e10 - 1.0).abs() <= 0.01
        && (gamma / analytic - 1.0).abs() <= 1e-3
        && (gamma / 1772.8 - 1.0).abs() <= 1e-3;
    Ok((ok, format!("Q = {q:.4e} (tol 1%), gamma(Q=7e7, effective) = {gamma:.2} vs {analytic:.2} (tol 0.1%)")))
}

fn effective_time_factor() -> Verdict {
    let geom = presets::geometry();
    let factor = geom.effective_factor();
    let t_eff = effective_time(220e-6, &geom) * 1e6;
    let ok = (factor - 0.21128).abs() <= 1e-4 && (t_eff - 46.5).abs() <= 0.2;
    Ok((ok, format!("factor = {factor:.5} (tol 1e-4), 220 us -> {t_eff:.2} us (tol 0.2)")))
}

/// A model integrated numerically next to its reference values.
struct ReferenceRun {
    label: &'static str,
    trajectory: Trajectory,
    reference: Vec<f64>,
}

fn oracle_times() -> Vec<f64> {
    (0..=500).map(|k| k as f64 * 1e-6).collect()
}

fn degenerate_rates(p: &PhysicalParams) -> Result<SimplifiedRates> {
    let eps = p.epsilon();
    SimplifiedRates::new(presets::CAVITY_RATE, presets::CAVITY_RATE, eps * presets::CAVITY_RATE, eps)
}

fn reference_runs() -> &'static std::result::Result<Vec<ReferenceRun>, String> {
    static RUNS: OnceLock<std::result::Result<Vec<ReferenceRun>, String>> = OnceLock::new();
    RUNS.get_or_init(|| build_reference_runs().map_err(|e| e.to_string()))
}

fn build_reference_runs() -> Result<Vec<ReferenceRun>> {
    let p = presets::params();
    let g = p.g();
    let times = oracle_times();
    let rho0 = DensityMatrix::excited_vacuum();
    let opts = RkOptions::default();
    let phenom = presets::PHENOM_RATE_RATIO * g;
    let (m1, m2) = (0.1 * g, 0.05 * g);
    let open = presets::rates();
    let degenerate = degenerate_rates(&p)?;

    let cases: Vec<(&'static str, ModelKind)> = vec![
        ("phenom_t0", ModelKind::PhenomT0 { gamma: phenom }),
        ("phenom_t", ModelKind::phenom_thermal(phenom, &p)),
        ("microscopic", ModelKind::Microscopic { gamma1: m1, gamma2: m2 }),
        ("open_cavity", ModelKind::open_cavity(open.expand())),
        ("degenerate", ModelKind::open_cavity(degenerate.expand())),
    ];
    cases
        .into_par_iter()
        .map(|(label, kind)| {
            let l = build_liouvillian(kind, &p)?;
            let trajectory = integrate_constant(&l, &rho0, &times, &opts)?;
            let reference = match kind {
                ModelKind::PhenomT0 { gamma } => times
                    .iter()
                    .map(|&t| Ok(ground_probability(&phenom_t0_rho(g, gamma, t)?.rho)))
                    .collect::<Result<Vec<_>>>()?,
                ModelKind::PhenomT { .. } => {
                    integrate_constant(&l, &rho0, &times, &RkOptions::tight())?.ground_probabilities()
                }
                ModelKind::Microscopic { gamma1, gamma2 } => {
                    times.iter().map(|&t| scala_pg(g, gamma1, gamma2, t)).collect()
                }
                ModelKind::OpenCavity { .. } => {
                    let rates = if label == "degenerate" { degenerate } else { open };
                    times
                        .iter()
                        .map(|&t| opencavity_pg(&rates, &p, t, &Profile::Constant))
                        .collect::<Result<Vec<_>>>()?
                }
            };
            Ok(ReferenceRun {
                label,
                trajectory,
                reference,
            })
        })
        .collect()
}

fn max_deviation(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn run_deviation(run: &ReferenceRun) -> f64 {
    max_deviation(&run.trajectory.ground_probabilities(), &run.reference)
}

fn oracle_equivalence() -> Verdict {
    let runs = reference_runs().as_ref().map_err(|e| crate::Error::Validation(e.clone()))?;
    let mut ok = true;
    let mut parts = Vec::new();
    for run in runs.iter().filter(|r| r.label != "degenerate") {
        let dev = run_deviation(run);
        ok &= dev <= 1e-6;
        parts.push(format!("{} {dev:.1e}", run.label));
    }
    Ok((ok, format!("max |dp_g| over 0..500 us: {} (tol 1e-6)", parts.join(", "))))
}

fn nstep_convergence() -> Verdict {
    let p = presets::params();
    let rates = presets::rates();
    let profile = Profile::Gaussian {
        geometry: presets::geometry(),
    };
    let kind = ModelKind::open_cavity(rates.expand());
    let times: Vec<f64> = (1..=43).map(|k| k as f64 * 10e-6).collect();
    let closed = times
        .iter()
        .map(|&t| opencavity_pg(&rates, &p, t, &profile))
        .collect::<Result<Vec<_>>>()?;
    let rho0 = DensityMatrix::excited_vacuum();
    let mut errors = Vec::new();
    let mut pg_last = Vec::new();
    for n in [101, 1001, 10001, 20001] {
        let states = nstep_series(&kind, &p, &profile, &rho0, &times, n)?;
        let pg: Vec<f64> = states.iter().map(ground_probability).collect();
        errors.push((n, max_deviation(&pg, &closed)));
        pg_last = pg;
    }
    // the closed form takes the Gaussian area over the whole real line; the
    // propagator only sees [0, t], whose area is smaller by erf(d/2w)
    let geom = presets::geometry();
    let window = erf(geom.diameter() / (2.0 * geom.waist()));
    let finite = GroundTerms::new(&rates, profile.phase_coupling(p.g()) * window)
        .ok_or_else(|| crate::Error::Validation("degenerate preset rates".into()))?;
    let finite_err = max_deviation(
        &pg_last,
        &times.iter().map(|&t| finite.eval(t)).collect::<Vec<_>>(),
    );
    let last = errors[errors.len() - 1].1;
    let monotone = errors.windows(2).all(|w| w[1].1 < w[0].1);
    let listing: Vec<String> = errors.iter().map(|(n, e)| format!("n={n}: {e:.2e}")).collect();
    Ok((
        last <= 1e-4 && monotone,
        format!(
            "{} (tol 1e-4 at n=20001; monotone: {monotone}); vs finite-window phase {finite_err:.1e}",
            listing.join(", ")
        ),
    ))
}

fn convolution() -> Verdict {
    let p = presets::params();
    let rates = presets::rates();
    let profile = Profile::Gaussian {
        geometry: presets::geometry(),
    };
    let times: Vec<f64> = (0..=43).map(|k| k as f64 * 10e-6).collect();
    let mut quad_err: f64 = 0.0;
    for delta_t in [0.5e-6, 2.37e-6, 5e-6] {
        for &t in &times {
            let closed = convolve_pg(&rates, &p, &profile, delta_t, t)?;
            let numeric = convolve_numeric(
                |s| opencavity_pg(&rates, &p, s, &profile).unwrap_or(f64::NAN),
                t,
                delta_t,
            )?;
            quad_err = quad_err.max((closed - numeric).abs());
        }
    }
    // the leading correction grows like ω²·t·Δt, so the limit is taken
    // along a decreasing sequence
    let mut limit = Vec::new();
    for delta_t in [1e-12, 1e-14, 1e-16] {
        let mut worst: f64 = 0.0;
        for &t in &times {
            let plain = opencavity_pg(&rates, &p, t, &profile)?;
            worst = worst.max((convolve_pg(&rates, &p, &profile, delta_t, t)? - plain).abs());
        }
        limit.push(worst);
    }
    let limit_err = limit[limit.len() - 1];
    let asymptote = p.omega0() / 2.0 * (2.0 * rates.eps - 1.0) / (2.0 * rates.eps + 1.0);
    let mut energy_rel: f64 = 0.0;
    for k in 0..=43 {
        let t = k as f64 * 10e-3;
        let plain = energy_mean(&rates, &p, t)?;
        let smeared = convolve_energy(&rates, &p, 5e-6, t)?;
        energy_rel = energy_rel.max(((smeared - plain) / (plain - asymptote)).abs());
    }
    let ok = quad_err <= 1e-6 && limit_err <= 1e-8 && energy_rel < 0.01;
    Ok((
        ok,
        format!(
            "closed vs quadrature {quad_err:.1e} (tol 1e-6), dt = 1e-12/1e-14/1e-16 s: {:.1e}/{:.1e}/{limit_err:.1e} (tol 1e-8), energy at 5 us {energy_rel:.1e} rel (tol 1e-2)",
            limit[0], limit[1]
        ),
    ))
}

fn damping_basis_pairs() -> Verdict {
    let p = presets::params();
    let rates = presets::rates().expand();
    let basis = damping_basis(&rates)?;
    let l = build_liouvillian(ModelKind::open_cavity(rates), &p)?;
    let scale = l.rotating().max_abs();
    let mut defect: f64 = 0.0;
    for i in 1..=9 {
        let rho = basis.eigenoperator(i);
        let rho = rho.scale(c(1.0 / rho.max_abs()));
        let lambda = basis.eigenvalue(i, 0.0, p.g());
        let image = ComplexMatrix::unvectorize(&l.rotating().apply(&rho.vectorize()));
        defect = defect.max((&image - &rho.scale(lambda)).max_abs());
    }
    let first = basis.eigenvalue(1, p.omega0(), p.g());
    let degenerate = degenerate_rates(&p)?;
    let flagged = damping_basis(&degenerate.expand())?.degenerate;
    let fallback = crate::closed_form::opencavity_rho(&degenerate, &p, 100e-6, &Profile::Constant)?.fallback;
    let runs = reference_runs().as_ref().map_err(|e| crate::Error::Validation(e.clone()))?;
    let oracle = runs
        .iter()
        .find(|r| r.label == "degenerate")
        .map(run_deviation)
        .unwrap_or(f64::INFINITY);
    // defects are quoted in units of the generator's largest entry; in 1/s
    // the floor is a few ulps of g
    let relative = defect / scale;
    let ok = relative <= 1e-10 && first.norm() == 0.0 && flagged && fallback && oracle <= 1e-6;
    Ok((
        ok,
        format!(
            "eigenpair defect {relative:.1e} of max |L| = {scale:.3e} ({defect:.1e} 1/s; tol 1e-10), L1 = {:.1}, degenerate S flagged: {flagged}, fallback: {fallback}, fallback vs RK {oracle:.1e} (tol 1e-6)",
            first.re
        ),
    ))
}

fn davies_equivalence() -> Verdict {
    let p = PhysicalParams::new(presets::RESONANCE, presets::COUPLING, 0.0)?;
    let (alpha, beta) = (0.8, 0.5);
    let (g1, g2, g3) = (presets::CAVITY_RATE, presets::CAVITY_RATE, presets::INTRA_RATE_RATIO * p.g());
    let all = davies_decompose(alpha, beta, &p, 3)?;
    let ops = truncate_to_subspace(&all);
    let weights = SpectralWeights::from_rates(g1, g2, g3, alpha, beta, &p)?;
    let assembled = assemble_generator(&ops, &weights, &p)?;
    let reference = build_liouvillian(
        ModelKind::open_cavity(DecayRates {
            gamma1: g1,
            gamma2: g2,
            gamma3: g3,
            ..Default::default()
        }),
        &p,
    )?;
    let diff = (assembled.matrix() - reference.matrix())
        .max_abs()
        .max((assembled.rotating() - reference.rotating()).max_abs());
    let scale = g1.max(g2).max(g3);
    // commutation defects measured against the operator's energy scale
    let commutation = all
        .iter()
        .map(|op| op.commutation_defect(&p) / (3.0 * p.omega0() * op.operator.max_abs()))
        .fold(0.0, f64::max);
    let ok = diff <= 1e-12 * scale && commutation <= 1e-10;
    Ok((
        ok,
        format!(
            "max entry gap {diff:.1e} (tol 1e-12 x largest rate {scale:.0}), relative commutation defect {commutation:.1e} (tol 1e-10)"
        ),
    ))
}

fn separability() -> Verdict {
    let p = presets::params();
    let rates = presets::rates();
    let profile = Profile::Constant;
    let fine: Vec<f64> = (0..=10_600).map(|k| k as f64 * 0.01e-6).collect();
    let values = fine
        .par_iter()
        .map(|&t| lambda4(&rates, &p, t, &profile))
        .collect::<Result<Vec<_>>>()?;
    let coarse = oracle_times()
        .par_iter()
        .map(|&t| lambda4(&rates, &p, t, &profile))
        .collect::<Result<Vec<_>>>()?;
    let largest = values.iter().chain(&coarse).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let at_zero = values[0];
    let mut spectrum_gap: f64 = 0.0;
    for k in 0..=200 {
        let t = k as f64 * 2.5e-6;
        let state = crate::closed_form::opencavity_rho(&rates, &p, t, &profile)?;
        let embedded = embed4(&state.rho)?;
        let mut closed = ppt_spectrum(&embedded)?.lambda;
        closed.sort_by(|a, b| b.total_cmp(a));
        let brute = hermitian_eigen(&partial_transpose(embedded.matrix())?)?.values;
        for (x, y) in closed.iter().zip(&brute) {
            spectrum_gap = spectrum_gap.max((x - y).abs());
        }
    }
    let rate = envelope_decay_rate(&fine, &values)?;
    let expected = (rates.gamma1 + rates.gamma2 + 2.0 * rates.gamma3) / 4.0;
    let rel = (rate / expected - 1.0).abs();
    let ok = largest <= 0.0 && at_zero == 0.0 && spectrum_gap <= 1e-10 && rel <= 0.02;
    Ok((
        ok,
        format!(
            "max lambda4 {largest:.1e} (<= 0), lambda4(0) = {at_zero:.1e}, closed vs eigensolve {spectrum_gap:.1e} (tol 1e-10), envelope rate {rate:.1} vs {expected:.1} ({:.2}%, tol 2%)",
            rel * 100.0
        ),
    ))
}

fn synthetic_series(model: &RabiModel) -> Result<ExperimentSeries> {
    let points = (0..=430)
        .map(|k| {
            let time = k as f64 * 1e-6;
            Ok(SeriesPoint {
                time,
                p_g: model.ground_probability(time)?,
                sigma: Some(0.01),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ExperimentSeries::new(points, TimeConvention::True)
}

fn fit_roundtrips() -> Verdict {
    let p = presets::params();
    let truth = RabiModel {
        params: p,
        eps: p.epsilon(),
        profile: Profile::Gaussian {
            geometry: presets::geometry(),
        },
        gamma1: presets::CAVITY_RATE,
        gamma2: presets::CAVITY_RATE,
        gamma3: presets::INTRA_RATE_RATIO * p.g(),
        delta_t: 0.0,
    };
    let opts = LmOptions::default();
    let start = RabiModel {
        gamma1: 25.0,
        gamma2: 25.0,
        gamma3: 0.05 * p.g(),
        ..truth
    };
    let spec = RabiFitSpec {
        free: vec![FreeParam::Gamma1, FreeParam::Gamma3],
        tie_gamma12: true,
    };
    let fit = fit_rabi(&synthetic_series(&truth)?, &start, &spec, &opts)?;
    let rate_err = (fit.get("gamma1=gamma2").unwrap_or(f64::NAN) / truth.gamma1 - 1.0).abs();
    let intra_err = (fit.get("gamma3").unwrap_or(f64::NAN) / truth.gamma3 - 1.0).abs();

    let smeared = RabiModel {
        delta_t: 2.37e-6,
        ..truth
    };
    let spec = RabiFitSpec {
        free: vec![FreeParam::DeltaT],
        tie_gamma12: false,
    };
    let start = RabiModel {
        delta_t: 1.5e-6,
        ..smeared
    };
    let fit = fit_rabi(&synthetic_series(&smeared)?, &start, &spec, &opts)?;
    let delta_err = (fit.get("delta_t").unwrap_or(f64::NAN) / smeared.delta_t - 1.0).abs();
    let ok = rate_err <= 1e-3 && intra_err <= 1e-3 && delta_err <= 1e-2;
    Ok((
        ok,
        format!(
            "gamma1=gamma2 {rate_err:.1e}, gamma3 {intra_err:.1e} (tol 1e-3), delta_t {delta_err:.1e} (tol 1e-2) relative"
        ),
    ))
}

fn hygiene() -> Verdict {
    let runs = reference_runs().as_ref().map_err(|e| crate::Error::Validation(e.clone()))?;
    let mut worst_trace: f64 = 0.0;
    let mut worst_herm: f64 = 0.0;
    let mut lowest = f64::INFINITY;
    let mut absorb = |v: crate::linalg::Validity| {
        worst_trace = worst_trace.max(v.trace_drift);
        worst_herm = worst_herm.max(v.hermiticity_defect);
        lowest = lowest.min(v.min_eigenvalue);
    };
    for run in runs {
        absorb(run.trajectory.worst_validity());
    }
    let p = presets::params();
    let profile = Profile::Gaussian {
        geometry: presets::geometry(),
    };
    let kind = ModelKind::open_cavity(presets::rates().expand());
    let times: Vec<f64> = (1..=10).map(|k| k as f64 * 50e-6).collect();
    let states = nstep_series(&kind, &p, &profile, &DensityMatrix::excited_vacuum(), &times, 1001)?;
    let nstep = Trajectory {
        times,
        states,
        model: Some(kind),
    };
    absorb(nstep.worst_validity());
    let ok = worst_trace <= TRAJECTORY_TOL && worst_herm <= TRAJECTORY_TOL && lowest >= -TRAJECTORY_TOL;
    Ok((
        ok,
        format!("trace drift {worst_trace:.1e}, hermiticity {worst_herm:.1e}, min eigenvalue {lowest:.1e} (tol 1e-9)"),
    ))
}
