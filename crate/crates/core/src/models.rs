//! Master-equation generators for the truncated atom-cavity system and the
//! thermodynamic helpers they depend on.
//!
//! Generators are 9x9 matrices acting on column-stacked 3x3 density matrices:
//! element (k, l) of ρ sits at index `k + 3 l`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::linalg::{c, Basis, ComplexMatrix, DensityMatrix, I, ONE, ZERO};

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const KB: f64 = 1.380_649e-23;

/// Resonance frequency, peak coupling and reservoir temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    omega0: f64,
    g: f64,
    temperature: f64,
}

impl PhysicalParams {
    pub fn new(omega0: f64, g: f64, temperature: f64) -> Result<Self> {
        if !(omega0.is_finite() && omega0 > 0.0) {
            return validation(format!("omega0 must be positive, got {omega0}"));
        }
        if !(g.is_finite() && g > 0.0) {
            return validation(format!("g must be positive, got {g}"));
        }
        if temperature.is_nan() || temperature < 0.0 {
            return validation(format!("temperature must be non-negative, got {temperature}"));
        }
        Ok(Self {
            omega0,
            g,
            temperature,
        })
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Same parameters with a different coupling.
    pub fn with_g(&self, g: f64) -> Result<Self> {
        Self::new(self.omega0, g, self.temperature)
    }

    /// KMS factor at the resonance frequency.
    pub fn epsilon(&self) -> f64 {
        kms_ratio(self.omega0, self)
    }
}

/// `exp(−ħω/kT)`; zero temperature gives 0.
pub fn kms_ratio(omega: f64, params: &PhysicalParams) -> f64 {
    if params.temperature == 0.0 {
        return 0.0;
    }
    (-HBAR * omega / (KB * params.temperature)).exp()
}

/// Bose-Einstein occupation `1/(exp(ħω/kT) − 1)`; zero temperature gives 0.
pub fn thermal_occupation(omega: f64, params: &PhysicalParams) -> f64 {
    if params.temperature == 0.0 {
        return 0.0;
    }
    1.0 / (HBAR * omega / (KB * params.temperature)).exp_m1()
}

/// The six rates of the open-cavity model.
///
/// `gamma1`/`gamma_a`: |Ω₊⟩ → |Ω₀⟩ and back; `gamma2`/`gamma_b`: |Ω₋⟩ → |Ω₀⟩
/// and back; `gamma3`/`gamma_c`: |Ω₊⟩ → |Ω₋⟩ and back.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecayRates {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma_a: f64,
    pub gamma_b: f64,
    pub gamma_c: f64,
}

impl DecayRates {
    /// `γ_a = εγ₁`, `γ_b = εγ₂`, `γ_c = γ₃`.
    pub fn simplified(gamma1: f64, gamma2: f64, gamma3: f64, eps: f64) -> Self {
        Self {
            gamma1,
            gamma2,
            gamma3,
            gamma_a: eps * gamma1,
            gamma_b: eps * gamma2,
            gamma_c: gamma3,
        }
    }

    /// Upward rates from the exact KMS factors at each Bohr frequency.
    pub fn thermal(gamma1: f64, gamma2: f64, gamma3: f64, params: &PhysicalParams) -> Self {
        let (w0, g) = (params.omega0(), params.g());
        Self {
            gamma1,
            gamma2,
            gamma3,
            gamma_a: kms_ratio(w0 + g, params) * gamma1,
            gamma_b: kms_ratio(w0 - g, params) * gamma2,
            gamma_c: kms_ratio(2.0 * g, params) * gamma3,
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.gamma1,
            self.gamma2,
            self.gamma3,
            self.gamma_a,
            self.gamma_b,
            self.gamma_c,
        ]
    }

    pub fn sum(&self) -> f64 {
        self.as_array().iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        check_rates(&self.as_array())
    }
}

/// Open-cavity rates under the simplification `γ_a = εγ₁, γ_b = εγ₂,
/// γ_c = γ₃`, which every closed form beyond the damping basis assumes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplifiedRates {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub eps: f64,
}

impl SimplifiedRates {
    pub fn new(gamma1: f64, gamma2: f64, gamma3: f64, eps: f64) -> Result<Self> {
        let r = Self {
            gamma1,
            gamma2,
            gamma3,
            eps,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        check_rates(&[self.gamma1, self.gamma2, self.gamma3])?;
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return validation(format!("eps must be a finite non-negative number, got {}", self.eps));
        }
        Ok(())
    }

    pub fn expand(&self) -> DecayRates {
        DecayRates::simplified(self.gamma1, self.gamma2, self.gamma3, self.eps)
    }

    /// `S` of the population block, real under the simplification whenever it
    /// is defined (returns NaN for a negative discriminant).
    pub fn s(&self) -> f64 {
        population_discriminant(&self.expand()).sqrt()
    }
}

pub(crate) fn population_discriminant(r: &DecayRates) -> f64 {
    let a = r.gamma1 - r.gamma2 + r.gamma3 - r.gamma_a - r.gamma_b + r.gamma_c;
    a * a + 4.0 * (r.gamma1 - r.gamma2) * (r.gamma_a - r.gamma_c)
}

fn check_rates(rates: &[f64]) -> Result<()> {
    for &r in rates {
        if !(r.is_finite() && r >= 0.0) {
            return validation(format!("rates must be finite and non-negative, got {r}"));
        }
    }
    Ok(())
}

/// Which master equation a generator represents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// Photon loss `|g,0⟩⟨g,1|` at zero temperature.
    PhenomT0 { gamma: f64 },
    /// Photon loss and thermal gain within the three-state truncation.
    PhenomT { gamma_down: f64, gamma_up: f64 },
    /// Dressed-state decay to the ground state.
    Microscopic { gamma1: f64, gamma2: f64 },
    /// Dressed-state decay plus intra-manifold jumps.
    OpenCavity { rates: DecayRates },
}

impl ModelKind {
    /// Thermal phenomenological model with `γ↑ = kms_ratio(ω₀)·γ↓`.
    pub fn phenom_thermal(gamma_down: f64, params: &PhysicalParams) -> Self {
        ModelKind::PhenomT {
            gamma_down,
            gamma_up: kms_ratio(params.omega0(), params) * gamma_down,
        }
    }

    pub fn open_cavity(rates: DecayRates) -> Self {
        ModelKind::OpenCavity { rates }
    }

    pub fn basis(&self) -> Basis {
        match self {
            ModelKind::PhenomT0 { .. } | ModelKind::PhenomT { .. } => Basis::Bare,
            ModelKind::Microscopic { .. } | ModelKind::OpenCavity { .. } => Basis::Dressed,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::PhenomT0 { .. } => "phenom_t0",
            ModelKind::PhenomT { .. } => "phenom_t",
            ModelKind::Microscopic { .. } => "microscopic",
            ModelKind::OpenCavity { .. } => "open_cavity",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelKind::PhenomT0 { gamma } => check_rates(&[gamma]),
            ModelKind::PhenomT {
                gamma_down,
                gamma_up,
            } => check_rates(&[gamma_down, gamma_up]),
            ModelKind::Microscopic { gamma1, gamma2 } => check_rates(&[gamma1, gamma2]),
            ModelKind::OpenCavity { rates } => rates.validate(),
        }
    }
}

/// A generator together with the frame frequency needed to move between the
/// laboratory frame and the frame rotating with the excitation number.
#[derive(Clone, Debug)]
pub struct Liouvillian {
    matrix: ComplexMatrix,
    rotating: ComplexMatrix,
    basis: Basis,
    kind: Option<ModelKind>,
    omega0: f64,
}

impl Liouvillian {
    pub(crate) fn from_parts(
        matrix: ComplexMatrix,
        basis: Basis,
        kind: Option<ModelKind>,
        omega0: f64,
    ) -> Self {
        assert_eq!(matrix.dim(), 9);
        let mut rotating = matrix.clone();
        for k in 0..3 {
            for l in 0..3 {
                let idx = k + 3 * l;
                rotating[(idx, idx)] += I * (omega0 * (EXCITATIONS[k] - EXCITATIONS[l]));
            }
        }
        Self {
            matrix,
            rotating,
            basis,
            kind,
            omega0,
        }
    }

    /// Generator with the given Hamiltonian basis and jump operators, in both
    /// frames.
    pub(crate) fn from_jumps(
        basis: Basis,
        params: &PhysicalParams,
        jumps: &[(ComplexMatrix, f64)],
    ) -> Result<Self> {
        let lab = hamiltonian(basis, params.omega0(), params.g())?;
        let rotating = hamiltonian(basis, 0.0, params.g())?;
        Ok(Self {
            matrix: lindblad_generator(&lab, jumps),
            rotating: lindblad_generator(&rotating, jumps),
            basis,
            kind: None,
            omega0: params.omega0(),
        })
    }

    /// The identically zero generator.
    pub fn zero(basis: Basis) -> Self {
        Self::from_parts(ComplexMatrix::zeros(9), basis, None, 0.0)
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    /// `None` for generators assembled from Davies operators.
    pub fn kind(&self) -> Option<ModelKind> {
        self.kind
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    /// Applies the generator to a 3x3 matrix.
    pub fn apply(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix::unvectorize(&self.matrix.apply(&rho.vectorize()))
    }

    /// The generator seen in the frame rotating at `ω₀·N`, with `N` the
    /// excitation number. Every jump operator used here changes `N` by a
    /// fixed amount, so the dissipator is unchanged and only the `ω₀` part of
    /// the Hamiltonian drops out.
    pub fn rotating(&self) -> &ComplexMatrix {
        &self.rotating
    }

    /// Maximum absolute entry of the trace row `Σ_i row(i + 3i)`.
    pub fn trace_defect(&self) -> f64 {
        (0..9)
            .map(|col| {
                (0..3)
                    .map(|i| self.matrix[(i + 3 * i, col)])
                    .sum::<Complex64>()
                    .norm()
            })
            .fold(0.0, f64::max)
    }
}

/// Excitation number of each basis state (identical in both bases).
pub(crate) const EXCITATIONS: [f64; 3] = [1.0, 1.0, 0.0];

/// Multiplies element (k, l) by `exp(−iω₀(n_k − n_l)t)`, taking a state from
/// the rotating frame to the laboratory frame.
pub(crate) fn to_lab_frame(rho: &mut ComplexMatrix, omega0: f64, t: f64) {
    for k in 0..3 {
        for l in 0..3 {
            let dn = EXCITATIONS[k] - EXCITATIONS[l];
            if dn != 0.0 {
                rho[(k, l)] *= Complex64::from_polar(1.0, -omega0 * dn * t);
            }
        }
    }
}

/// System Hamiltonian (in units of ħ) in the given 3-dimensional basis.
pub fn hamiltonian(basis: Basis, omega0: f64, g: f64) -> Result<ComplexMatrix> {
    let h = omega0 / 2.0;
    match basis {
        Basis::Bare => ComplexMatrix::from_rows(
            3,
            vec![c(h), c(g), ZERO, c(g), c(h), ZERO, ZERO, ZERO, c(-h)],
        ),
        Basis::Dressed => Ok(ComplexMatrix::from_real_diagonal(&[h + g, h - g, -h])),
        Basis::Bare4 => validation("no three-level Hamiltonian in the Bare4 basis"),
    }
}

/// Columns are |Ω₊⟩, |Ω₋⟩, |Ω₀⟩ written in bare coordinates.
pub fn dressed_unitary() -> ComplexMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    ComplexMatrix::from_rows(
        3,
        vec![c(s), c(-s), ZERO, c(s), c(s), ZERO, ZERO, ZERO, ONE],
    )
    .expect("constant matrix")
}

/// Changes a three-level state between the bare and dressed bases.
pub fn dressed_transform(rho: &DensityMatrix, target: Basis) -> Result<DensityMatrix> {
    let u = dressed_unitary();
    let m = match (rho.basis(), target) {
        (Basis::Bare, Basis::Dressed) => rho.matrix().conjugate_by(&u.dagger()),
        (Basis::Dressed, Basis::Bare) => rho.matrix().conjugate_by(&u),
        (from, to) => {
            return validation(format!("cannot transform from {from:?} to {to:?}"));
        }
    };
    Ok(DensityMatrix::new_unchecked(m, target))
}

/// Probability of finding the atom in |g⟩, i.e. `p(g,1) + p(g,0)`.
pub fn ground_probability(rho: &DensityMatrix) -> f64 {
    match rho.basis() {
        Basis::Bare => rho.population(1) + rho.population(2),
        Basis::Dressed => {
            0.5 * (rho.population(0) + rho.population(1)) + rho.get(0, 1).re + rho.population(2)
        }
        Basis::Bare4 => rho.population(2) + rho.population(3),
    }
}

/// Moves a three-level state into `target` if it is not already there.
pub(crate) fn in_basis(rho: &DensityMatrix, target: Basis) -> Result<DensityMatrix> {
    if rho.basis() == target {
        Ok(rho.clone())
    } else {
        dressed_transform(rho, target)
    }
}

/// 9x9 matrix of a linear map on 3x3 matrices.
pub(crate) fn superoperator(map: impl Fn(&ComplexMatrix) -> ComplexMatrix) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(9);
    for k in 0..3 {
        for l in 0..3 {
            let image = map(&ComplexMatrix::unit(3, k, l)).vectorize();
            for (row, z) in image.into_iter().enumerate() {
                out[(row, k + 3 * l)] = z;
            }
        }
    }
    out
}

/// `rate·(LρL† − ½{L†L, ρ})`
pub(crate) fn lindblad(jump: &ComplexMatrix, rate: f64, rho: &ComplexMatrix) -> ComplexMatrix {
    if rate == 0.0 {
        return ComplexMatrix::zeros(rho.dim());
    }
    let ld = jump.dagger();
    let sandwich = &(jump * rho) * &ld;
    let number = &ld * jump;
    (&sandwich - &number.anticommutator(rho).scale(c(0.5))).scale(c(rate))
}

fn jumps(kind: &ModelKind) -> Vec<(ComplexMatrix, f64)> {
    let unit = |r, col| ComplexMatrix::unit(3, r, col);
    match *kind {
        ModelKind::PhenomT0 { gamma } => vec![(unit(2, 1), gamma)],
        ModelKind::PhenomT {
            gamma_down,
            gamma_up,
        } => vec![(unit(2, 1), gamma_down), (unit(1, 2), gamma_up)],
        // "rate·(½LρL† − ¼{L†L,ρ})" is (rate/2)·D[L]
        ModelKind::Microscopic { gamma1, gamma2 } => {
            vec![(unit(2, 0), gamma1 / 2.0), (unit(2, 1), gamma2 / 2.0)]
        }
        ModelKind::OpenCavity { rates } => vec![
            (unit(2, 0), rates.gamma1 / 2.0),
            (unit(0, 2), rates.gamma_a / 2.0),
            (unit(2, 1), rates.gamma2 / 2.0),
            (unit(1, 2), rates.gamma_b / 2.0),
            (unit(1, 0), rates.gamma3 / 2.0),
            (unit(0, 1), rates.gamma_c / 2.0),
        ],
    }
}

/// Unvalidated generator matrix; used by propagators that rebuild the
/// generator for many coupling values.
pub(crate) fn generator_matrix(kind: &ModelKind, omega0: f64, g: f64) -> ComplexMatrix {
    let h = hamiltonian(kind.basis(), omega0, g).expect("three-level basis");
    lindblad_generator(&h, &jumps(kind))
}

/// `−i[H, ·] + Σ rate·D[L]` as a 9x9 matrix.
pub(crate) fn lindblad_generator(h: &ComplexMatrix, jumps: &[(ComplexMatrix, f64)]) -> ComplexMatrix {
    superoperator(|rho| {
        let mut out = h.commutator(rho).scale(-I);
        for (jump, rate) in jumps {
            out = &out + &lindblad(jump, *rate, rho);
        }
        out
    })
}

/// Builds the generator of the requested model.
pub fn build_liouvillian(kind: ModelKind, params: &PhysicalParams) -> Result<Liouvillian> {
    kind.validate()?;
    Ok(Liouvillian {
        matrix: generator_matrix(&kind, params.omega0(), params.g()),
        // built directly rather than by subtracting ω₀ terms, which would
        // cost about eleven significant digits
        rotating: generator_matrix(&kind, 0.0, params.g()),
        basis: kind.basis(),
        kind: Some(kind),
        omega0: params.omega0(),
    })
}

/// Generator in the rotating frame split as `base + g·slope`, exact because
/// the generator is affine in the coupling.
#[derive(Clone, Debug)]
pub(crate) struct AffineGenerator {
    pub base: ComplexMatrix,
    pub slope: ComplexMatrix,
}

impl AffineGenerator {
    pub fn new(kind: &ModelKind) -> Self {
        let base = generator_matrix(kind, 0.0, 0.0);
        let slope = &generator_matrix(kind, 0.0, 1.0) - &base;
        Self { base, slope }
    }

    pub fn at(&self, g: f64) -> ComplexMatrix {
        &self.base + &self.slope.scale(c(g))
    }
}
