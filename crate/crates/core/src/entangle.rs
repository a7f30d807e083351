//! Atom-photon separability through the partial-transpose spectrum.

use num_complex::Complex64;

use crate::closed_form::opencavity_rho;
use crate::error::{validation, Result};
use crate::evolve::Profile;
use crate::linalg::{hermitian_eigen, partial_transpose, Basis, ComplexMatrix, DensityMatrix};
use crate::models::{in_basis, PhysicalParams, SimplifiedRates};

/// Embeds a three-level state into the two-qubit space |e1⟩,|e0⟩,|g1⟩,|g0⟩
/// with an empty |e1⟩ row and column.
pub fn embed4(rho3: &DensityMatrix) -> Result<DensityMatrix> {
    if rho3.basis() == Basis::Bare4 {
        return validation("state is already four-dimensional");
    }
    let bare = in_basis(rho3, Basis::Bare)?;
    let mut m = ComplexMatrix::zeros(4);
    for i in 0..3 {
        for j in 0..3 {
            m[(i + 1, j + 1)] = bare.get(i, j);
        }
    }
    Ok(DensityMatrix::new_unchecked(m, Basis::Bare4))
}

/// Eigenvalues of the partial transpose. With the embedded sparsity pattern
/// they are `⟨g1|ρ|g1⟩`, `⟨e0|ρ|e0⟩` and `½(ρ₀₀ ± √(ρ₀₀² + 4|c|²))`, the
/// last one (`λ₄`) being the only one that can go negative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PptSpectrum {
    pub lambda: [f64; 4],
    /// Set when the input lacked the embedded pattern and the spectrum came
    /// from a full eigensolve (then `lambda` is sorted descending).
    pub numeric: bool,
}

impl PptSpectrum {
    pub fn min(&self) -> f64 {
        self.lambda.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_separable(&self, tol: f64) -> bool {
        self.min() >= -tol
    }
}

fn has_embedded_pattern(m: &ComplexMatrix) -> bool {
    let zero = |i: usize, j: usize| m[(i, j)] == Complex64::new(0.0, 0.0);
    (0..4).all(|k| zero(0, k) && zero(k, 0)) && zero(1, 3) && zero(3, 1) && zero(2, 3) && zero(3, 2)
}

pub fn ppt_spectrum(rho4: &DensityMatrix) -> Result<PptSpectrum> {
    if rho4.basis() != Basis::Bare4 {
        return validation("partial transpose needs a four-dimensional state");
    }
    let m = rho4.matrix();
    if !has_embedded_pattern(m) {
        let values = hermitian_eigen(&partial_transpose(m)?)?.values;
        return Ok(PptSpectrum {
            lambda: [values[0], values[1], values[2], values[3]],
            numeric: true,
        });
    }
    let ground = m[(3, 3)].re;
    let coherence = m[(1, 2)].norm_sqr();
    let root = (ground * ground + 4.0 * coherence).sqrt();
    let upper = 0.5 * (ground + root);
    // −2|c|²/(ρ₀₀ + √…) avoids cancelling ρ₀₀ against the root
    let lower = if upper > 0.0 { -coherence / upper } else { 0.0 };
    Ok(PptSpectrum {
        lambda: [m[(2, 2)].re, m[(1, 1)].re, upper, lower],
        numeric: false,
    })
}

/// `⟨e,0|ρ|g,1⟩` from the dressed components:
/// `½(ρ₊₊ − ρ₋₋) + i·Im ρ₊₋`.
pub fn coherence_of(rho: &DensityMatrix) -> Result<Complex64> {
    Ok(in_basis(rho, Basis::Bare)?.get(0, 1))
}

/// The coherence from the damping-basis solution next to the printed
/// comparison formula.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoherenceReport {
    pub value: Complex64,
    pub printed: Complex64,
    pub deviation: f64,
    pub fallback: bool,
}

/// `¼e^{−γ₂t/2}(γ₁−γ₂+2γ₃)(e^{−(γ₁−γ₂+γ₃)t/2} − 1)/(γ₁−γ₂+γ₃)
///  + (i/2)e^{−(γ₁+γ₂+γ₃)t/4}·sin 2gt`
pub fn printed_coherence(gamma1: f64, gamma2: f64, gamma3: f64, g: f64, t: f64) -> Complex64 {
    let rate = gamma1 - gamma2 + gamma3;
    // (e^{−rt/2} − 1)/r with its r → 0 limit −t/2
    let ratio = if rate == 0.0 {
        -t / 2.0
    } else {
        (-rate * t / 2.0).exp_m1() / rate
    };
    let re = 0.25 * (-gamma2 * t / 2.0).exp() * (gamma1 - gamma2 + 2.0 * gamma3) * ratio;
    let im = 0.5 * (-(gamma1 + gamma2 + gamma3) * t / 4.0).exp() * (2.0 * g * t).sin();
    Complex64::new(re, im)
}

pub fn coherence_e0_g1(
    rates: &SimplifiedRates,
    params: &PhysicalParams,
    t: f64,
    profile: &Profile,
) -> Result<CoherenceReport> {
    let state = opencavity_rho(rates, params, t, profile)?;
    let value = coherence_of(&state.rho)?;
    let printed = printed_coherence(
        rates.gamma1,
        rates.gamma2,
        rates.gamma3,
        profile.phase_coupling(params.g()),
        t,
    );
    Ok(CoherenceReport {
        value,
        printed,
        deviation: (value - printed).norm(),
        fallback: state.fallback,
    })
}

/// `λ₄(t)` of the open-cavity solution.
pub fn lambda4(rates: &SimplifiedRates, params: &PhysicalParams, t: f64, profile: &Profile) -> Result<f64> {
    let state = opencavity_rho(rates, params, t, profile)?;
    Ok(ppt_spectrum(&embed4(&state.rho)?)?.lambda[3])
}

/// Decay rate of the envelope of an oscillating signal: log-linear least
/// squares through the local maxima of `|values|`.
pub fn envelope_decay_rate(times: &[f64], values: &[f64]) -> Result<f64> {
    if times.len() != values.len() {
        return validation("times and values differ in length");
    }
    let mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let peaks: Vec<(f64, f64)> = (1..mags.len().saturating_sub(1))
        .filter(|&i| mags[i] > mags[i - 1] && mags[i] >= mags[i + 1] && mags[i] > 0.0)
        .map(|i| (times[i], mags[i].ln()))
        .collect();
    if peaks.len() < 2 {
        return validation(format!("need at least two envelope peaks, found {}", peaks.len()));
    }
    let n = peaks.len() as f64;
    let mean_t = peaks.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = peaks.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = peaks.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_y)).sum();
    let sxx: f64 = peaks.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    Ok(-sxy / sxx)
}
