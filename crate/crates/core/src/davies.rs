//! Davies jump operators of the coupling `α(a + a†) + βa†a` in the
//! Jaynes-Cummings dressed basis, and the generator they produce.
//!
//! Dressed levels are ordered `Ω₁₊, Ω₁₋, Ω₀, Ω₂₊, Ω₂₋, …` so the leading 3x3
//! block is the three-level subspace used everywhere else.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::linalg::{c, Basis, ComplexMatrix};
use crate::models::{kms_ratio, Liouvillian, PhysicalParams};

/// Relative tolerance for treating two Bohr frequencies as equal.
pub const FREQUENCY_RTOL: f64 = 1e-12;

/// A dressed level `|Ω_{N,m}⟩`; the ground level has `manifold = 0`, `sign = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DressedLevel {
    pub manifold: usize,
    pub sign: i8,
}

impl DressedLevel {
    /// Energy in units of ħ: `(N − ½)ω₀ + m·g√N`.
    pub fn energy(&self, params: &PhysicalParams) -> f64 {
        (self.manifold as f64 - 0.5) * params.omega0() + self.sign as f64 * params.g() * (self.manifold as f64).sqrt()
    }

    /// Amplitude on the bare state |atom, n⟩ (`excited` selects the atom).
    fn amplitude(&self, excited: bool, n: usize) -> f64 {
        if self.manifold == 0 {
            return if !excited && n == 0 { 1.0 } else { 0.0 };
        }
        let s = std::f64::consts::FRAC_1_SQRT_2;
        match excited {
            false if n == self.manifold => s,
            true if n + 1 == self.manifold => self.sign as f64 * s,
            _ => 0.0,
        }
    }
}

/// Levels with `N ≤ n_max` in storage order.
pub fn dressed_levels(n_max: usize) -> Vec<DressedLevel> {
    let mut levels = vec![
        DressedLevel { manifold: 1, sign: 1 },
        DressedLevel { manifold: 1, sign: -1 },
        DressedLevel { manifold: 0, sign: 0 },
    ];
    for manifold in 2..=n_max {
        levels.push(DressedLevel { manifold, sign: 1 });
        levels.push(DressedLevel { manifold, sign: -1 });
    }
    levels
}

/// Bohr frequency `E(to) − E(from)` of the transition carried by `|from⟩⟨to|`,
/// written so the `g` part is not swamped by the `ω₀` part.
fn bohr_frequency(from: DressedLevel, to: DressedLevel, params: &PhysicalParams) -> f64 {
    let dn = to.manifold as f64 - from.manifold as f64;
    let split = to.sign as f64 * (to.manifold as f64).sqrt() - from.sign as f64 * (from.manifold as f64).sqrt();
    dn * params.omega0() + params.g() * split
}

/// `⟨Ω_i| α(a + a†) + βa†a |Ω_j⟩`, evaluated on the bare Fock components.
fn coupling_element(bra: DressedLevel, ket: DressedLevel, alpha: f64, beta: f64) -> f64 {
    let top = bra.manifold.max(ket.manifold) + 1;
    let mut total = 0.0;
    for excited in [false, true] {
        for n in 0..=top {
            let k = ket.amplitude(excited, n);
            if k == 0.0 {
                continue;
            }
            // a|n⟩ = √n|n−1⟩, a†|n⟩ = √(n+1)|n+1⟩, a†a|n⟩ = n|n⟩
            if n > 0 {
                total += alpha * (n as f64).sqrt() * bra.amplitude(excited, n - 1) * k;
            }
            total += alpha * ((n + 1) as f64).sqrt() * bra.amplitude(excited, n + 1) * k;
            total += beta * n as f64 * bra.amplitude(excited, n) * k;
        }
    }
    total
}

#[derive(Clone, Debug)]
pub struct DaviesOperator {
    pub bohr_frequency: f64,
    pub operator: ComplexMatrix,
}

impl DaviesOperator {
    /// `‖[Ω_S, A] + ωA‖_max` with `Ω_S` the dressed energies.
    pub fn commutation_defect(&self, params: &PhysicalParams) -> f64 {
        let n = self.operator.dim();
        let levels = dressed_levels((n - 1) / 2);
        let mut worst: f64 = 0.0;
        for (i, li) in levels.iter().enumerate() {
            for (j, lj) in levels.iter().enumerate() {
                let a = self.operator[(i, j)];
                let comm = a * (li.energy(params) - lj.energy(params));
                worst = worst.max((comm + a * self.bohr_frequency).norm());
            }
        }
        worst
    }

    pub fn adjoint(&self) -> Self {
        Self {
            bohr_frequency: -self.bohr_frequency,
            operator: self.operator.dagger(),
        }
    }
}

fn same_frequency(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= FREQUENCY_RTOL * a.abs().max(b.abs())
}

/// All `A(ω)` on manifolds `N ≤ n_max`, including `ω ≤ 0`, so that
/// `Σ_ω A(ω)` is the projected coupling operator.
pub fn davies_decompose(alpha: f64, beta: f64, params: &PhysicalParams, n_max: usize) -> Result<Vec<DaviesOperator>> {
    if n_max < 1 {
        return validation("n_max must be at least 1");
    }
    if !alpha.is_finite() || !beta.is_finite() {
        return validation("coupling constants must be finite");
    }
    let levels = dressed_levels(n_max);
    let dim = levels.len();
    let mut ops: Vec<DaviesOperator> = Vec::new();
    for (i, &bra) in levels.iter().enumerate() {
        for (j, &ket) in levels.iter().enumerate() {
            let value = coupling_element(bra, ket, alpha, beta);
            if value == 0.0 {
                continue;
            }
            let omega = bohr_frequency(bra, ket, params);
            let slot = match ops.iter().position(|op| same_frequency(op.bohr_frequency, omega)) {
                Some(k) => k,
                None => {
                    ops.push(DaviesOperator {
                        bohr_frequency: omega,
                        operator: ComplexMatrix::zeros(dim),
                    });
                    ops.len() - 1
                }
            };
            ops[slot].operator[(i, j)] += c(value);
        }
    }
    ops.sort_by(|a, b| b.bohr_frequency.total_cmp(&a.bohr_frequency));
    Ok(ops)
}

/// `Π(α(a + a†) + βa†a)Π` on manifolds `N ≤ n_max`.
pub fn projected_coupling(alpha: f64, beta: f64, n_max: usize) -> ComplexMatrix {
    let levels = dressed_levels(n_max);
    let mut m = ComplexMatrix::zeros(levels.len());
    for (i, &bra) in levels.iter().enumerate() {
        for (j, &ket) in levels.iter().enumerate() {
            m[(i, j)] = c(coupling_element(bra, ket, alpha, beta));
        }
    }
    m
}

/// Restricts operators to {Ω₊, Ω₋, Ω₀} and drops those that vanish there.
pub fn truncate_to_subspace(ops: &[DaviesOperator]) -> Vec<DaviesOperator> {
    ops.iter()
        .filter_map(|op| {
            let mut m = ComplexMatrix::zeros(3);
            for i in 0..3 {
                for j in 0..3 {
                    m[(i, j)] = op.operator[(i, j)];
                }
            }
            (m.max_abs() > 0.0).then_some(DaviesOperator {
                bohr_frequency: op.bohr_frequency,
                operator: m,
            })
        })
        .collect()
}

/// Downward transition rates `γ(ω)` for `ω > 0`; upward rates follow from
/// `γ(−ω) = e^{−ħω/kT}γ(ω)` and `γ(0) = 0`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectralWeights {
    entries: Vec<(f64, f64)>,
}

impl SpectralWeights {
    pub fn new(entries: Vec<(f64, f64)>) -> Result<Self> {
        for &(omega, gamma) in &entries {
            if !(omega > 0.0 && omega.is_finite()) {
                return validation(format!("weights are given for positive frequencies, got {omega}"));
            }
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return validation(format!("spectral weight must be non-negative, got {gamma}"));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, omega: f64) -> Option<f64> {
        if omega == 0.0 {
            return Some(0.0);
        }
        self.entries
            .iter()
            .find(|(w, _)| same_frequency(*w, omega))
            .map(|&(_, g)| g)
    }

    /// Weights that reproduce open-cavity rates `γ₁ = γ(ω₀+g)α²`,
    /// `γ₂ = γ(ω₀−g)α²`, `γ₃ = γ(2g)β²/2`.
    pub fn from_rates(gamma1: f64, gamma2: f64, gamma3: f64, alpha: f64, beta: f64, params: &PhysicalParams) -> Result<Self> {
        if alpha == 0.0 || beta == 0.0 {
            return validation("rates cannot be mapped with a vanishing coupling constant");
        }
        let (w0, g) = (params.omega0(), params.g());
        Self::new(vec![
            (w0 + g, gamma1 / (alpha * alpha)),
            (w0 - g, gamma2 / (alpha * alpha)),
            (2.0 * g, 2.0 * gamma3 / (beta * beta)),
        ])
    }
}

/// `γ(ω)D[A(ω)] + γ(−ω)D[A(ω)†]` summed over `ω > 0`, plus the dressed
/// Hamiltonian. Energy shifts are not included.
pub fn assemble_generator(
    ops: &[DaviesOperator],
    weights: &SpectralWeights,
    params: &PhysicalParams,
) -> Result<Liouvillian> {
    let mut jumps = Vec::new();
    for op in ops {
        if op.operator.dim() != 3 {
            return validation("operators must be truncated to the three-level subspace");
        }
        if op.bohr_frequency <= 0.0 {
            continue;
        }
        let down = weights.get(op.bohr_frequency).ok_or(Error::MissingWeight {
            frequency: op.bohr_frequency,
        })?;
        let up = kms_ratio(op.bohr_frequency, params) * down;
        jumps.push((op.operator.clone(), down));
        jumps.push((op.operator.dagger(), up));
    }
    Liouvillian::from_jumps(Basis::Dressed, params, &jumps)
}
