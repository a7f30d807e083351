//! Analytic solutions: the zero-temperature phenomenological model, the
//! dressed-state (microscopic) model, the open-cavity damping basis with its
//! probabilities and mean energy, and the empirical fitting functions.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::evolve::{propagate_exact, CavityGeometry, Profile};
use crate::linalg::{c, Basis, ComplexMatrix, DensityMatrix, I, ZERO};
use crate::models::{
    build_liouvillian, population_discriminant, DecayRates, ModelKind, PhysicalParams, SimplifiedRates,
};

/// Which analytic continuation the phenomenological solution used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `16g² > γ²`: damped oscillation.
    Strong,
    /// `16g² ≤ γ²`: hyperbolic functions.
    Overdamped,
}

#[derive(Clone, Debug)]
pub struct PhenomSolution {
    pub rho: DensityMatrix,
    pub regime: Regime,
}

/// `E·sinh(u)/s` and `E·(cosh(u) − 1)/s²` for `u = s·τ`, written as entire
/// functions of `w = s²τ²` so both regimes share one code path.
fn damped_kernels(w: f64, tau: f64, envelope_rate: f64) -> (f64, f64, f64) {
    let e = (-envelope_rate * 2.0 * tau).exp();
    if w.abs() < 1e-8 {
        let sh = tau * (1.0 + w / 6.0 + w * w / 120.0);
        let cm = tau * tau * (0.5 + w / 24.0 + w * w / 720.0);
        return (e, e * sh, e * cm);
    }
    if w < 0.0 {
        let v = (-w).sqrt();
        let sh = tau * v.sin() / v;
        let half = (v / 2.0).sin();
        let cm = tau * tau * 2.0 * half * half / (v * v);
        return (e, e * sh, e * cm);
    }
    let u = w.sqrt();
    let decay = envelope_rate * 2.0 * tau;
    if u < 300.0 {
        let half = (u / 2.0).sinh();
        (e, e * tau * u.sinh() / u, e * tau * tau * 2.0 * half * half / (u * u))
    } else {
        // combine exponentials before they overflow
        let up = (u - decay).exp();
        let down = (-u - decay).exp();
        let es = 0.5 * (up - down);
        let ec = 0.5 * (up + down);
        (e, es * tau / u, (ec - e) * tau * tau / (u * u))
    }
}

/// Closed-form state of the zero-temperature phenomenological model started
/// in |e,0⟩.
pub fn phenom_t0_rho(g: f64, gamma: f64, t: f64) -> Result<PhenomSolution> {
    if !(g > 0.0 && g.is_finite()) {
        return validation(format!("g must be positive, got {g}"));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return validation(format!("gamma must be non-negative, got {gamma}"));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return validation(format!("time must be non-negative, got {t}"));
    }
    let regime = if 16.0 * g * g > gamma * gamma {
        Regime::Strong
    } else {
        Regime::Overdamped
    };
    let tau = t / 2.0;
    let s2 = gamma * gamma - 16.0 * g * g;
    let (e, sh, cm) = damped_kernels(s2 * tau * tau, tau, gamma / 2.0);
    let g2 = g * g;
    let p11 = e + gamma * sh + (gamma * gamma - 8.0 * g2) * cm;
    let p22 = 8.0 * g2 * cm;
    let p33 = 1.0 - e - gamma * gamma * cm - gamma * sh;
    let coh = I * (2.0 * g * (sh + gamma * cm));
    let mut m = ComplexMatrix::zeros(3);
    m[(0, 0)] = c(p11);
    m[(1, 1)] = c(p22);
    m[(2, 2)] = c(p33);
    m[(0, 1)] = coh;
    m[(1, 0)] = coh.conj();
    Ok(PhenomSolution {
        rho: DensityMatrix::new_unchecked(m, Basis::Bare),
        regime,
    })
}

/// Populations `(p(e,0), p(g,1), p(g,0))` of [`phenom_t0_rho`].
pub fn phenom_t0_probs(g: f64, gamma: f64, t: f64) -> Result<(f64, f64, f64)> {
    let sol = phenom_t0_rho(g, gamma, t)?;
    Ok((
        sol.rho.population(0),
        sol.rho.population(1),
        sol.rho.population(2),
    ))
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return validation(format!("time must be non-negative, got {t}"));
    }
    Ok(())
}

/// Dressed-basis state of the microscopic model started in |e,0⟩, with the
/// Rabi phase set by `g_phase`.
pub fn scala_rho(g_phase: f64, gamma1: f64, gamma2: f64, t: f64) -> Result<DensityMatrix> {
    check_time(t)?;
    ModelKind::Microscopic { gamma1, gamma2 }.validate()?;
    let p = 0.5 * (-gamma1 * t / 2.0).exp();
    let m_ = 0.5 * (-gamma2 * t / 2.0).exp();
    let coh = Complex64::from_polar(-0.5 * (-(gamma1 + gamma2) * t / 4.0).exp(), -2.0 * g_phase * t);
    let mut m = ComplexMatrix::zeros(3);
    m[(0, 0)] = c(p);
    m[(1, 1)] = c(m_);
    m[(2, 2)] = c(1.0 - p - m_);
    m[(0, 1)] = coh;
    m[(1, 0)] = coh.conj();
    Ok(DensityMatrix::new_unchecked(m, Basis::Dressed))
}

/// `1 − ¼e^{−γ₁t/2} − ¼e^{−γ₂t/2} − ½e^{−(γ₁+γ₂)t/4}·cos(2g t)`.
pub fn scala_pg(g_phase: f64, gamma1: f64, gamma2: f64, t: f64) -> f64 {
    // summed symmetrically so that swapping the rates is exact
    let pops = 0.25 * ((-gamma1 * t / 2.0).exp() + (-gamma2 * t / 2.0).exp());
    1.0 - pops - 0.5 * (-(gamma1 + gamma2) * t / 4.0).exp() * (2.0 * g_phase * t).cos()
}

/// Relative size below which `S` (or the eigenvector determinant) counts as
/// zero.
pub const DEGENERACY_RTOL: f64 = 1e-12;

/// Eigenoperators and eigenvalues of the open-cavity generator.
///
/// The three diagonal eigenoperators are `x_i|Ω₊⟩⟨Ω₊| + y_i|Ω₋⟩⟨Ω₋| +
/// z_i|Ω₀⟩⟨Ω₀|`; the remaining six are the matrix units |Ω₊⟩⟨Ω₋|,
/// |Ω₊⟩⟨Ω₀|, |Ω₋⟩⟨Ω₀| and their adjoints.
#[derive(Clone, Debug)]
pub struct DampingBasis {
    pub rates: DecayRates,
    pub x: [f64; 3],
    pub y: [f64; 3],
    pub z: [f64; 3],
    pub s: f64,
    /// Set when `S` vanishes, is not real, or the diagonal eigenoperators are
    /// linearly dependent; the closed forms then do not apply.
    pub degenerate: bool,
}

/// Coefficients of |e,0⟩⟨e,0| on the eigenoperators 1, 2, 3, 4 and 7.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitialDecomposition {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a7: f64,
}

pub fn damping_basis(rates: &DecayRates) -> Result<DampingBasis> {
    rates.validate()?;
    let DecayRates {
        gamma1: g1,
        gamma2: g2,
        gamma3: g3,
        gamma_a: ga,
        gamma_b: gb,
        gamma_c: gc,
    } = *rates;
    let disc = population_discriminant(rates);
    let sum = rates.sum();
    let s = disc.max(0.0).sqrt();
    let x = [
        gb * gc + ga * (g2 + gc),
        (g1 - g3) * (gc - ga) - (g1 + g3) * (g1 - g2 + g3 - gb + s),
        (g1 - g3) * (gc - ga) - (g1 + g3) * (g1 - g2 + g3 - gb - s),
    ];
    let y = [
        g3 * ga + gb * (g1 + g3),
        (g1 + g3) * (g3 - gb) + g3 * (g2 - ga + gc + s) - g1 * gb,
        (g1 + g3) * (g3 - gb) + g3 * (g2 - ga + gc - s) - g1 * gb,
    ];
    let z = [
        g2 * g3 + g1 * (g2 + gc),
        -2.0 * g2 * g3 + g1 * (g1 - g2 + g3 + ga + gb - gc + s),
        -2.0 * g2 * g3 + g1 * (g1 - g2 + g3 + ga + gb - gc - s),
    ];
    let mut basis = DampingBasis {
        rates: *rates,
        x,
        y,
        z,
        s,
        degenerate: false,
    };
    basis.degenerate = disc < 0.0
        || !disc.is_finite()
        || s <= DEGENERACY_RTOL * sum
        || sum == 0.0
        || basis.normalized_determinant() <= 1e-10;
    Ok(basis)
}

impl DampingBasis {
    /// Determinant of the column-normalised `[x y z]` matrix.
    pub fn normalized_determinant(&self) -> f64 {
        let cols: Vec<[f64; 3]> = (0..3)
            .map(|i| {
                let v = [self.x[i], self.y[i], self.z[i]];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if n == 0.0 {
                    [0.0; 3]
                } else {
                    [v[0] / n, v[1] / n, v[2] / n]
                }
            })
            .collect();
        det3(&cols).abs()
    }

    /// Eigenvalue `Λ_i`, `i` in 1..=9. Passing `omega0 = 0` gives the
    /// eigenvalue in the rotating frame.
    pub fn eigenvalue(&self, i: usize, omega0: f64, g: f64) -> Complex64 {
        let r = &self.rates;
        let sum = r.sum();
        match i {
            1 => ZERO,
            2 => c(-(sum + self.s) / 4.0),
            3 => c(-(sum - self.s) / 4.0),
            4 => -I * (2.0 * g) - (r.gamma1 + r.gamma2 + r.gamma3 + r.gamma_c) / 4.0,
            5 => -I * (omega0 + g) - (r.gamma1 + r.gamma3 + r.gamma_a + r.gamma_b) / 4.0,
            6 => -I * (omega0 - g) - (r.gamma2 + r.gamma_a + r.gamma_b + r.gamma_c) / 4.0,
            7..=9 => self.eigenvalue(i - 3, omega0, g).conj(),
            _ => panic!("eigenvalue index {i} outside 1..=9"),
        }
    }

    pub fn eigenvalues(&self, omega0: f64, g: f64) -> [Complex64; 9] {
        std::array::from_fn(|k| self.eigenvalue(k + 1, omega0, g))
    }

    /// Eigenoperator `ρ_i` in the dressed basis, `i` in 1..=9.
    pub fn eigenoperator(&self, i: usize) -> ComplexMatrix {
        match i {
            1..=3 => ComplexMatrix::from_real_diagonal(&[self.x[i - 1], self.y[i - 1], self.z[i - 1]]),
            4 => ComplexMatrix::unit(3, 0, 1),
            5 => ComplexMatrix::unit(3, 0, 2),
            6 => ComplexMatrix::unit(3, 1, 2),
            7 => ComplexMatrix::unit(3, 1, 0),
            8 => ComplexMatrix::unit(3, 2, 0),
            9 => ComplexMatrix::unit(3, 2, 1),
            _ => panic!("eigenoperator index {i} outside 1..=9"),
        }
    }

    /// Expansion of |e,0⟩⟨e,0| = diag(½, ½, 0) − ½ρ₄ − ½ρ₇.
    pub fn initial_decomposition(&self) -> Result<InitialDecomposition> {
        if self.degenerate {
            return validation("damping basis is degenerate; no unique decomposition");
        }
        let cols = [
            [self.x[0], self.y[0], self.z[0]],
            [self.x[1], self.y[1], self.z[1]],
            [self.x[2], self.y[2], self.z[2]],
        ];
        let rhs = [0.5, 0.5, 0.0];
        let d = det3(&cols);
        let solve = |k: usize| {
            let mut m = cols;
            m[k] = rhs;
            det3(&m) / d
        };
        Ok(InitialDecomposition {
            a1: solve(0),
            a2: solve(1),
            a3: solve(2),
            a4: -0.5,
            a7: -0.5,
        })
    }
}

impl InitialDecomposition {
    pub fn reconstruct(&self, basis: &DampingBasis) -> ComplexMatrix {
        let terms = [
            (self.a1, 1),
            (self.a2, 2),
            (self.a3, 3),
            (self.a4, 4),
            (self.a7, 7),
        ];
        terms.iter().fold(ComplexMatrix::zeros(3), |acc, &(a, i)| {
            &acc + &basis.eigenoperator(i).scale(c(a))
        })
    }
}

fn det3(cols: &[[f64; 3]]) -> f64 {
    let [a, b, cc] = [cols[0], cols[1], cols[2]];
    a[0] * (b[1] * cc[2] - b[2] * cc[1]) - b[0] * (a[1] * cc[2] - a[2] * cc[1])
        + cc[0] * (a[1] * b[2] - a[2] * b[1])
}

/// Open-cavity state, flagged when the damping-basis formulas were bypassed.
#[derive(Clone, Debug)]
pub struct OpenCavityState {
    pub rho: DensityMatrix,
    pub fallback: bool,
}

fn needs_fallback(rates: &SimplifiedRates, basis: &DampingBasis) -> bool {
    let sum = rates.expand().sum();
    basis.degenerate || (rates.eps * rates.gamma1 - rates.gamma3).abs() <= DEGENERACY_RTOL * sum
}

/// `Σ A_i e^{Λ_i t} ρ_i` for the initial state |e,0⟩. A Gaussian profile
/// changes only the Rabi phase, through `g√π·w/d`.
pub fn opencavity_rho(
    rates: &SimplifiedRates,
    params: &PhysicalParams,
    t: f64,
    profile: &Profile,
) -> Result<OpenCavityState> {
    rates.validate()?;
    check_time(t)?;
    let full = rates.expand();
    let basis = damping_basis(&full)?;
    let g_phase = profile.phase_coupling(params.g());
    if needs_fallback(rates, &basis) {
        let effective = params.with_g(g_phase)?;
        let l = build_liouvillian(ModelKind::open_cavity(full), &effective)?;
        let rho = propagate_exact(&l, &DensityMatrix::excited_vacuum(), t)?;
        return Ok(OpenCavityState { rho, fallback: true });
    }
    let a = basis.initial_decomposition()?;
    let mut m = ComplexMatrix::zeros(3);
    for (coef, i) in [(a.a1, 1), (a.a2, 2), (a.a3, 3)] {
        let decay = (basis.eigenvalue(i, 0.0, 0.0).re * t).exp();
        m = &m + &basis.eigenoperator(i).scale(c(coef * decay));
    }
    let l4 = basis.eigenvalue(4, params.omega0(), g_phase);
    let coh = (l4 * t).exp() * a.a4;
    m[(0, 1)] = coh;
    m[(1, 0)] = coh.conj();
    Ok(OpenCavityState {
        rho: DensityMatrix::new_unchecked(m, Basis::Dressed),
        fallback: false,
    })
}

/// Exponential decomposition of the open-cavity ground-state probability:
/// `asymptote + Σ c_k e^{−κ_k t} + amplitude·e^{−Γt}·cos(ω t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTerms {
    pub asymptote: f64,
    pub exponentials: [(f64, f64); 2],
    pub amplitude: f64,
    pub envelope_rate: f64,
    pub frequency: f64,
}

impl GroundTerms {
    /// `None` when `S` vanishes and the expansion does not exist.
    pub fn new(rates: &SimplifiedRates, g_phase: f64) -> Option<Self> {
        let SimplifiedRates {
            gamma1: g1,
            gamma2: g2,
            gamma3: g3,
            eps,
        } = *rates;
        let s = rates.s();
        let sum = rates.expand().sum();
        if !s.is_finite() || s <= DEGENERACY_RTOL * sum || sum == 0.0 {
            return None;
        }
        let base = g1 + g2 + 2.0 * g3 + eps * (g1 + g2);
        let lead = 2.0 * g3 - eps * (g1 + g2);
        let denom = 4.0 * s * (2.0 * eps + 1.0);
        Some(Self {
            asymptote: (1.0 + eps) / (1.0 + 2.0 * eps),
            exponentials: [
                ((lead - s) / denom, (base + s) / 4.0),
                (-(lead + s) / denom, (base - s) / 4.0),
            ],
            amplitude: -0.5,
            envelope_rate: (g1 + g2 + 2.0 * g3) / 4.0,
            frequency: 2.0 * g_phase,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let decays: f64 = self
            .exponentials
            .iter()
            .map(|&(coef, rate)| coef * (-rate * t).exp())
            .sum();
        self.asymptote
            + decays
            + self.amplitude * (-self.envelope_rate * t).exp() * (self.frequency * t).cos()
    }
}

/// Probability of |g⟩ in the open-cavity model started in |e,0⟩.
pub fn opencavity_pg(
    rates: &SimplifiedRates,
    params: &PhysicalParams,
    t: f64,
    profile: &Profile,
) -> Result<f64> {
    rates.validate()?;
    check_time(t)?;
    match GroundTerms::new(rates, profile.phase_coupling(params.g())) {
        Some(terms) => Ok(terms.eval(t)),
        None => {
            let state = opencavity_rho(rates, params, t, profile)?;
            Ok(crate::models::ground_probability(&state.rho))
        }
    }
}

/// Exponential decomposition of the mean energy
/// `constant + Σ c_k e^{−κ_k t}` (rad/s).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyTerms {
    pub constant: f64,
    pub exponentials: [(f64, f64); 2],
}

impl EnergyTerms {
    pub fn new(rates: &SimplifiedRates, params: &PhysicalParams) -> Option<Self> {
        let SimplifiedRates {
            gamma1: g1,
            gamma2: g2,
            gamma3: g3,
            eps,
        } = *rates;
        let s = rates.s();
        let sum = rates.expand().sum();
        if !s.is_finite() || s <= DEGENERACY_RTOL * sum || sum == 0.0 {
            return None;
        }
        let w0 = params.omega0();
        let g = params.g();
        let base = g1 + g2 + 2.0 * g3 + eps * (g1 + g2);
        let lead = g1 * eps * (w0 + 2.0 * g) + g2 * eps * (w0 - 2.0 * g) + g * (g1 - g2) - 2.0 * w0 * g3;
        let denom = 2.0 * s * (2.0 * eps + 1.0);
        Some(Self {
            constant: w0 / 2.0 * (2.0 * eps - 1.0) / (2.0 * eps + 1.0),
            exponentials: [
                ((lead + s * w0) / denom, (base + s) / 4.0),
                (-(lead - s * w0) / denom, (base - s) / 4.0),
            ],
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.constant
            + self
                .exponentials
                .iter()
                .map(|&(coef, rate)| coef * (-rate * t).exp())
                .sum::<f64>()
    }
}

/// `Tr(Ωρ)` for a dressed-basis state.
pub fn energy_of(rho: &DensityMatrix, params: &PhysicalParams) -> Result<f64> {
    let d = crate::models::in_basis(rho, Basis::Dressed)?;
    let (w0, g) = (params.omega0(), params.g());
    Ok((w0 / 2.0 + g) * d.population(0) + (w0 / 2.0 - g) * d.population(1) - w0 / 2.0 * d.population(2))
}

/// Mean energy `Tr(Ωρ(t))` in rad/s for the open-cavity model.
pub fn energy_mean(rates: &SimplifiedRates, params: &PhysicalParams, t: f64) -> Result<f64> {
    rates.validate()?;
    check_time(t)?;
    match EnergyTerms::new(rates, params) {
        Some(terms) => Ok(terms.eval(t)),
        None => {
            let state = opencavity_rho(rates, params, t, &Profile::Constant)?;
            energy_of(&state.rho, params)
        }
    }
}

/// Empirical damped-oscillation fitting functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BruneVariant {
    /// Argument is effective time, decay `γ t_eff`.
    EffTime,
    /// Argument is true time, Rabi phase from `g_eff`.
    TrueTime,
    /// Argument is effective time, decay `γ t_eff/(√π·w/d)`.
    Rescaled,
}

/// Truncated Bose-Einstein weights `n̄ⁿ/(1+n̄)^{n+1}`, cut where the
/// cumulative weight reaches `1 − 1e-9` and renormalised to sum to one.
pub fn thermal_weights(nbar: f64) -> Result<Vec<f64>> {
    if !(nbar >= 0.0 && nbar.is_finite()) {
        return validation(format!("mean photon number must be non-negative, got {nbar}"));
    }
    let q = nbar / (1.0 + nbar);
    let mut weights = Vec::new();
    let mut p = 1.0 / (1.0 + nbar);
    let mut total = 0.0;
    while total < 1.0 - 1e-9 {
        weights.push(p);
        total += p;
        p *= q;
        if weights.len() > 100_000_000 {
            return validation("thermal distribution too broad to truncate");
        }
    }
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// `1 − ½ Σ P(n)(1 + e^{−κt}·cos(2g√(n+1)·t))` in the chosen variant.
pub fn brune_fit_formula(
    variant: BruneVariant,
    gamma: f64,
    g: f64,
    nbar: f64,
    geom: &CavityGeometry,
    t: f64,
) -> Result<f64> {
    let f = geom.effective_factor();
    let (decay, freq) = match variant {
        BruneVariant::EffTime => (gamma, g),
        BruneVariant::TrueTime => (gamma, g * f),
        BruneVariant::Rescaled => (gamma / f, g),
    };
    let weights = thermal_weights(nbar)?;
    let envelope = (-decay * t).exp();
    let sum: f64 = weights
        .iter()
        .enumerate()
        .map(|(n, p)| p * (1.0 + envelope * (2.0 * freq * ((n + 1) as f64).sqrt() * t).cos()))
        .sum();
    Ok(1.0 - 0.5 * sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::{integrate_constant, RkOptions};
    use crate::models::{ground_probability, in_basis};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const G: f64 = 47.0e3 * PI;

    fn params() -> PhysicalParams {
        PhysicalParams::new(2.0 * PI * 51.099e9, G, 0.8).unwrap()
    }

    fn geometry() -> CavityGeometry {
        CavityGeometry::new(5.96e-3, 50e-3, None).unwrap()
    }

    #[test]
    fn phenom_initial_condition() {
        let sol = phenom_t0_rho(G, 0.3 * G, 0.0).unwrap();
        assert!((sol.rho.population(0) - 1.0).abs() < 1e-15);
        assert!(sol.rho.get(0, 1).norm() < 1e-15);
        assert_eq!(sol.regime, Regime::Strong);
    }

    #[test]
    fn phenom_unitary_limit() {
        for t in [1e-6, 7e-6, 23e-6] {
            let (pe, pg1, pg0) = phenom_t0_probs(G, 0.0, t).unwrap();
            assert!((pe - (G * t).cos().powi(2)).abs() < 1e-12);
            assert!((pg1 - (G * t).sin().powi(2)).abs() < 1e-12);
            assert!(pg0.abs() < 1e-12);
        }
        let (pe, pg1, _) = phenom_t0_probs(G, 0.0, PI / (2.0 * G)).unwrap();
        assert!(pe.abs() < 1e-12 && (pg1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn phenom_long_time_limit() {
        let (pe, pg1, pg0) = phenom_t0_probs(G, 0.3 * G, 1.0).unwrap();
        assert!(pe.abs() < 1e-12 && pg1.abs() < 1e-12 && (pg0 - 1.0).abs() < 1e-12);
        // overdamped branch far out must not overflow
        let (pe, pg1, pg0) = phenom_t0_probs(1.0, 1e4, 10.0).unwrap();
        assert!(pe.is_finite() && pg1.is_finite() && pg0.is_finite());
        assert!((pe + pg1 + pg0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn phenom_matches_exact_propagation_in_both_regimes() {
        for (gamma, regime) in [(0.3 * G, Regime::Strong), (4.0 * G, Regime::Overdamped), (5.0 * G, Regime::Overdamped)] {
            let p = params();
            let l = build_liouvillian(ModelKind::PhenomT0 { gamma }, &p).unwrap();
            for t in [0.3e-6, 4e-6, 20e-6] {
                let sol = phenom_t0_rho(G, gamma, t).unwrap();
                assert_eq!(sol.regime, regime);
                let exact = propagate_exact(&l, &DensityMatrix::excited_vacuum(), t).unwrap();
                assert!((sol.rho.matrix() - exact.matrix()).max_abs() < 1e-10, "γ={gamma} t={t}");
            }
        }
    }

    #[test]
    fn phenom_critical_point_is_continuous() {
        let gamma = 4.0 * G;
        let t = 3e-6;
        let at = phenom_t0_probs(G, gamma, t).unwrap();
        let near = phenom_t0_probs(G, gamma * (1.0 + 1e-9), t).unwrap();
        assert!((at.0 - near.0).abs() < 1e-7);
        assert!((at.1 - near.1).abs() < 1e-7);
    }

    #[test]
    fn scala_initial_and_lossless() {
        let rho = scala_rho(G, 0.1, 0.2, 0.0).unwrap();
        let expected = in_basis(&DensityMatrix::excited_vacuum(), Basis::Dressed).unwrap();
        assert!((rho.matrix() - expected.matrix()).max_abs() < 1e-15);
        let t = 13e-6;
        let lossless = scala_rho(G, 0.0, 0.0, t).unwrap();
        assert!((lossless.population(0) - 0.5).abs() < 1e-15);
        assert!((lossless.get(0, 1).norm() - 0.5).abs() < 1e-15);
        assert!((scala_pg(G, 0.0, 0.0, t) - (G * t).sin().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn scala_population_trapping() {
        let gamma1 = 0.05 * G;
        let t = 80.0 / gamma1;
        assert!((scala_pg(G, gamma1, 0.0, t) - 0.75).abs() < 1e-4);
    }

    #[test]
    fn scala_matches_rk() {
        let p = params();
        let (g1, g2) = (0.1 * G, 0.05 * G);
        let l = build_liouvillian(ModelKind::Microscopic { gamma1: g1, gamma2: g2 }, &p).unwrap();
        let t = 30e-6;
        let traj = integrate_constant(&l, &DensityMatrix::excited_vacuum(), &[t], &RkOptions::default()).unwrap();
        assert!((ground_probability(&traj.states[0]) - scala_pg(G, g1, g2, t)).abs() < 1e-9);
        let rho = scala_rho(G, g1, g2, t).unwrap();
        assert!((rho.matrix() - traj.states[0].matrix()).max_abs() < 1e-9);
    }

    fn general_rates() -> DecayRates {
        DecayRates {
            gamma1: 900.0,
            gamma2: 400.0,
            gamma3: 3000.0,
            gamma_a: 60.0,
            gamma_b: 25.0,
            gamma_c: 2800.0,
        }
    }

    #[test]
    fn damping_basis_eigenpairs() {
        let p = params();
        let rates = general_rates();
        let basis = damping_basis(&rates).unwrap();
        assert!(!basis.degenerate);
        let l = build_liouvillian(ModelKind::open_cavity(rates), &p).unwrap();
        for i in 1..=9 {
            let rho = basis.eigenoperator(i);
            let rho = rho.scale(c(1.0 / rho.max_abs()));
            let lambda = basis.eigenvalue(i, 0.0, p.g());
            let lhs = ComplexMatrix::unvectorize(&l.rotating().apply(&rho.vectorize()));
            assert!((&lhs - &rho.scale(lambda)).max_abs() < 1e-10, "pair {i}");
            assert!(basis.eigenvalue(i, p.omega0(), p.g()).re <= 0.0);
        }
        assert_eq!(basis.eigenvalue(1, p.omega0(), p.g()), ZERO);
    }

    #[test]
    fn damping_basis_s_under_simplification() {
        let (gamma, g3, eps) = (17.73, 0.07 * G, 0.0466);
        let basis = damping_basis(&DecayRates::simplified(gamma, gamma, g3, eps)).unwrap();
        assert!((basis.s - (2.0 * g3 - 2.0 * eps * gamma).abs()).abs() < 1e-9 * basis.s);
    }

    #[test]
    fn damping_basis_reduces_to_microscopic_rates() {
        let (g1, g2) = (0.3, 0.1);
        let basis = damping_basis(&DecayRates {
            gamma1: g1,
            gamma2: g2,
            ..Default::default()
        })
        .unwrap();
        assert!((basis.eigenvalue(2, 0.0, 1.0).re + g1.max(g2) / 2.0).abs() < 1e-15);
        assert!((basis.eigenvalue(3, 0.0, 1.0).re + g1.min(g2) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs_are_flagged() {
        let basis = damping_basis(&DecayRates::simplified(10.0, 10.0, 0.5, 0.05)).unwrap();
        assert!(basis.degenerate);
        assert!(basis.initial_decomposition().is_err());
        let scala_equal = damping_basis(&DecayRates {
            gamma1: 1.0,
            gamma2: 1.0,
            ..Default::default()
        })
        .unwrap();
        assert!(scala_equal.degenerate);
    }

    #[test]
    fn initial_decomposition_reconstructs_initial_state() {
        let basis = damping_basis(&general_rates()).unwrap();
        let a = basis.initial_decomposition().unwrap();
        let target = in_basis(&DensityMatrix::excited_vacuum(), Basis::Dressed).unwrap();
        assert!((&a.reconstruct(&basis) - target.matrix()).max_abs() < 1e-10);
        assert_eq!((a.a4, a.a7), (-0.5, -0.5));
    }

    #[test]
    fn stationary_component_is_asymptotic_state() {
        let eps = 0.0466;
        let basis = damping_basis(&DecayRates::simplified(900.0, 400.0, 3000.0, eps)).unwrap();
        let a = basis.initial_decomposition().unwrap();
        let stationary = basis.eigenoperator(1).scale(c(a.a1));
        let expected = ComplexMatrix::from_real_diagonal(&[eps, eps, 1.0]).scale(c(1.0 / (2.0 * eps + 1.0)));
        assert!((&stationary - &expected).max_abs() < 1e-12);
    }

    fn experiment_rates() -> SimplifiedRates {
        SimplifiedRates::new(17.73, 17.73, 0.07 * G, 0.0466).unwrap()
    }

    #[test]
    fn opencavity_initial_and_asymptote() {
        let p = params();
        let r = experiment_rates();
        let s0 = opencavity_rho(&r, &p, 0.0, &Profile::Constant).unwrap();
        let target = in_basis(&DensityMatrix::excited_vacuum(), Basis::Dressed).unwrap();
        assert!((s0.rho.matrix() - target.matrix()).max_abs() < 1e-12);
        let late = opencavity_rho(&r, &p, 5.0, &Profile::Constant).unwrap();
        let eps = r.eps;
        let expected = [eps, eps, 1.0].map(|v| v / (2.0 * eps + 1.0));
        for k in 0..3 {
            assert!((late.rho.population(k) - expected[k]).abs() < 1e-9);
        }
        let pg = opencavity_pg(&r, &p, 5.0, &Profile::Constant).unwrap();
        assert!((pg - 0.957).abs() < 1e-3);
    }

    #[test]
    fn opencavity_pg_agrees_with_state() {
        let p = params();
        let r = SimplifiedRates::new(900.0, 400.0, 3000.0, 0.0466).unwrap();
        for profile in [Profile::Constant, Profile::Gaussian { geometry: geometry() }] {
            for t in [0.0, 3e-6, 40e-6, 300e-6] {
                let state = opencavity_rho(&r, &p, t, &profile).unwrap();
                assert!(!state.fallback);
                let pg = opencavity_pg(&r, &p, t, &profile).unwrap();
                assert!((ground_probability(&state.rho) - pg).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn opencavity_pure_intra_manifold_limit() {
        let p = PhysicalParams::new(2.0 * PI * 51.099e9, G, 0.0).unwrap();
        let g3 = 0.07 * G;
        let r = SimplifiedRates::new(0.0, 0.0, g3, 0.0).unwrap();
        for t in [5e-6, 50e-6, 200e-6] {
            let expected = 0.5 - 0.5 * (-g3 * t / 2.0).exp() * (2.0 * G * t).cos();
            assert!((opencavity_pg(&r, &p, t, &Profile::Constant).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn opencavity_lossless_falls_back() {
        let p = params();
        let r = SimplifiedRates::new(0.0, 0.0, 0.0, 0.0).unwrap();
        let t = 17e-6;
        let state = opencavity_rho(&r, &p, t, &Profile::Constant).unwrap();
        assert!(state.fallback);
        assert!((opencavity_pg(&r, &p, t, &Profile::Constant).unwrap() - (G * t).sin().powi(2)).abs() < 1e-10);
    }

    #[test]
    fn energy_formula_matches_trace() {
        let p = params();
        for r in [experiment_rates(), SimplifiedRates::new(900.0, 400.0, 3000.0, 0.0466).unwrap()] {
            for t in [0.0, 1e-5, 1e-3, 0.05] {
                let state = opencavity_rho(&r, &p, t, &Profile::Constant).unwrap();
                let trace = energy_of(&state.rho, &p).unwrap();
                let formula = energy_mean(&r, &p, t).unwrap();
                assert!((trace - formula).abs() < 1e-12 * p.omega0(), "t={t}");
            }
        }
        assert!((energy_mean(&experiment_rates(), &p, 0.0).unwrap() - p.omega0() / 2.0).abs() < 1e-4);
    }

    #[test]
    fn energy_equal_rates_reduction() {
        let p = params();
        let w0 = p.omega0();
        for (gamma, g3, eps) in [(17.73, 0.07 * G, 0.0466), (17.73, 0.01 * G, 0.0466), (50.0, 0.07 * G, 0.0)] {
            let r = SimplifiedRates::new(gamma, gamma, g3, eps).unwrap();
            for t in [0.0, 0.01, 0.1] {
                let expected =
                    w0 * (2.0 * eps + (-gamma * (2.0 * eps + 1.0) * t / 2.0).exp()) / (2.0 * eps + 1.0) - w0 / 2.0;
                assert!((energy_mean(&r, &p, t).unwrap() - expected).abs() < 1e-12 * w0);
            }
        }
        let r = experiment_rates();
        let late = energy_mean(&r, &p, 10.0).unwrap() + w0 / 2.0;
        assert!((late - w0 * (1.0 - 1.0 / (2.0 * r.eps + 1.0))).abs() < 1e-9 * w0);
    }

    #[test]
    fn brune_formula_limits() {
        let geom = geometry();
        for t in [1e-6, 13e-6] {
            let v = brune_fit_formula(BruneVariant::EffTime, 0.0, G, 0.0, &geom, t).unwrap();
            assert!((v - (G * t).sin().powi(2)).abs() < 1e-12);
        }
        for variant in [BruneVariant::EffTime, BruneVariant::TrueTime, BruneVariant::Rescaled] {
            let v = brune_fit_formula(variant, 1.0 / 220e-6, G, 0.05, &geom, 1.0).unwrap();
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn brune_rescaled_differs_only_in_decay() {
        let geom = geometry();
        let gamma = 1.0 / 220e-6;
        let f = geom.effective_factor();
        let t = 40e-6;
        let rescaled = brune_fit_formula(BruneVariant::Rescaled, gamma, G, 0.05, &geom, t).unwrap();
        let eff = brune_fit_formula(BruneVariant::EffTime, gamma / f, G, 0.05, &geom, t).unwrap();
        assert!((rescaled - eff).abs() < 1e-15);
    }

    #[test]
    fn thermal_weights_truncation() {
        let w = thermal_weights(0.05).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((w[0] - 1.0 / 1.05).abs() < 1e-8);
        assert_eq!(thermal_weights(0.0).unwrap(), vec![1.0]);
        assert!(thermal_weights(-1.0).is_err());
    }

    proptest! {
        #[test]
        fn scala_symmetric(g1 in 0.0f64..1e4, g2 in 0.0f64..1e4, t in 0.0f64..5e-4) {
            prop_assert_eq!(scala_pg(G, g1, g2, t), scala_pg(G, g2, g1, t));
        }

        #[test]
        fn phenom_probabilities_sum_to_one(ratio in 0.0f64..10.0, t in 0.0f64..1e-3) {
            let (a, b, c_) = phenom_t0_probs(G, ratio * G, t).unwrap();
            prop_assert!((a + b + c_ - 1.0).abs() < 1e-12);
        }

        #[test]
        fn opencavity_reaches_asymptote(g1 in 1.0f64..2e3, g3 in 1.0f64..2e4, eps in 0.0f64..0.2) {
            let p = params();
            let r = SimplifiedRates::new(g1, g1 * 0.7, g3, eps).unwrap();
            let basis = damping_basis(&r.expand()).unwrap();
            let slow = basis.eigenvalue(2, 0.0, 0.0).re.abs().min(basis.eigenvalue(3, 0.0, 0.0).re.abs());
            let t = 10.0 / slow;
            let pg = opencavity_pg(&r, &p, t, &Profile::Constant).unwrap();
            prop_assert!((pg - (1.0 + eps) / (1.0 + 2.0 * eps)).abs() < 1e-4);
        }
    }
}
