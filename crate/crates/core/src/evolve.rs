//! Numerical propagation: an adaptive Dormand-Prince integrator used as the
//! reference for every closed form, exact propagation by matrix exponential,
//! the Gaussian mode profile and the n-step product propagator.
//!
//! All propagation happens in the frame rotating with the excitation number,
//! which removes the optical frequency from the generator; states are moved
//! back to the laboratory frame on output.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::linalg::{c, expm_apply, ComplexMatrix, DensityMatrix, Validity};
use crate::models::{in_basis, to_lab_frame, AffineGenerator, Liouvillian, ModelKind, PhysicalParams};

/// Cavity mode waist and mirror diameter (metres), optionally the atomic
/// velocity (m/s). Without a velocity the atom crosses the mirror diameter
/// in the total interaction time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CavityGeometry {
    waist: f64,
    diameter: f64,
    velocity: Option<f64>,
}

impl CavityGeometry {
    pub fn new(waist: f64, diameter: f64, velocity: Option<f64>) -> Result<Self> {
        if !(waist.is_finite() && waist > 0.0) {
            return validation(format!("waist must be positive, got {waist}"));
        }
        if !(diameter.is_finite() && diameter > waist) {
            return validation(format!(
                "mirror diameter must exceed the waist ({waist}), got {diameter}"
            ));
        }
        if let Some(v) = velocity {
            if !(v.is_finite() && v > 0.0) {
                return validation(format!("velocity must be positive, got {v}"));
            }
        }
        Ok(Self {
            waist,
            diameter,
            velocity,
        })
    }

    pub fn waist(&self) -> f64 {
        self.waist
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn velocity(&self) -> Option<f64> {
        self.velocity
    }

    /// `√π·w/d`, the ratio of effective to true time.
    pub fn effective_factor(&self) -> f64 {
        std::f64::consts::PI.sqrt() * self.waist / self.diameter
    }
}

/// Coupling profile seen by the atom.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum Profile {
    Constant,
    Gaussian { geometry: CavityGeometry },
}

impl Profile {
    /// Coupling that sets the Rabi phase in the closed forms.
    pub fn phase_coupling(&self, g: f64) -> f64 {
        match self {
            Profile::Constant => g,
            Profile::Gaussian { geometry } => g * geometry.effective_factor(),
        }
    }
}

/// `g(t′) = g·exp(−v²(t/2 − t′)²/w²)` for a run of total length `t_total`.
pub fn gaussian_coupling(g_peak: f64, geom: &CavityGeometry, t_total: f64, t_prime: f64) -> f64 {
    let v = geom.velocity.unwrap_or(geom.diameter / t_total);
    let x = v * (t_total / 2.0 - t_prime) / geom.waist;
    g_peak * (-x * x).exp()
}

/// `t_eff = √π·(w/d)·t`.
pub fn effective_time(t: f64, geom: &CavityGeometry) -> f64 {
    t * geom.effective_factor()
}

/// Inverse of [`effective_time`].
pub fn true_time(t_eff: f64, geom: &CavityGeometry) -> f64 {
    t_eff / geom.effective_factor()
}

/// Tolerances of the adaptive integrator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RkOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for RkOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            max_steps: 5_000_000,
        }
    }
}

impl RkOptions {
    /// Ten times tighter than the default, for reference runs.
    pub fn tight() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-14,
            ..Self::default()
        }
    }
}

/// Sampled solution of a master equation.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub model: Option<ModelKind>,
}

impl Trajectory {
    /// Worst trace drift, Hermiticity defect and smallest eigenvalue over all
    /// samples.
    pub fn worst_validity(&self) -> Validity {
        self.states.iter().map(DensityMatrix::validity).fold(
            Validity {
                trace_drift: 0.0,
                hermiticity_defect: 0.0,
                min_eigenvalue: f64::INFINITY,
            },
            |acc, v| Validity {
                trace_drift: acc.trace_drift.max(v.trace_drift),
                hermiticity_defect: acc.hermiticity_defect.max(v.hermiticity_defect),
                min_eigenvalue: acc.min_eigenvalue.min(v.min_eigenvalue),
            },
        )
    }

    pub fn ground_probabilities(&self) -> Vec<f64> {
        self.states.iter().map(crate::models::ground_probability).collect()
    }
}

// Dormand-Prince 5(4) tableau
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

fn combine(y: &[Complex64], h: f64, terms: &[(f64, &[Complex64])]) -> Vec<Complex64> {
    let mut out = y.to_vec();
    for &(w, k) in terms {
        if w == 0.0 {
            continue;
        }
        let s = h * w;
        for (o, ki) in out.iter_mut().zip(k) {
            *o += ki * s;
        }
    }
    out
}

/// Dormand-Prince on `dy/dt = f(t, y)`, stepping exactly onto each sample
/// time. Returns the state at every sample.
fn dopri<F>(f: F, y0: Vec<Complex64>, times: &[f64], opts: &RkOptions) -> Result<Vec<Vec<Complex64>>>
where
    F: Fn(f64, &[Complex64]) -> Vec<Complex64>,
{
    let mut out = Vec::with_capacity(times.len());
    let mut t = 0.0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let scale = k1.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let y_scale = y.iter().map(|z| z.norm()).fold(0.0, f64::max).max(opts.atol);
    let span = times.last().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let mut h = if scale > 0.0 {
        (0.01 * y_scale / scale).min(span)
    } else {
        span
    };
    let mut steps = 0usize;

    for &target in times {
        while t < target {
            steps += 1;
            if steps > opts.max_steps {
                return validation(format!("step budget exhausted at t = {t:e} s"));
            }
            let remaining = target - t;
            let last = h >= remaining;
            let step = if last { remaining } else { h };
            if step <= 16.0 * f64::EPSILON * t.abs().max(span * 1e-6) && !last {
                return Err(Error::StepUnderflow { time: t });
            }
            let k2 = f(t + C2 * step, &combine(&y, step, &[(A21, &k1)]));
            let k3 = f(t + C3 * step, &combine(&y, step, &[(A31, &k1), (A32, &k2)]));
            let k4 = f(
                t + C4 * step,
                &combine(&y, step, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
            );
            let k5 = f(
                t + C5 * step,
                &combine(&y, step, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            );
            let k6 = f(
                t + step,
                &combine(
                    &y,
                    step,
                    &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                ),
            );
            let y_new = combine(
                &y,
                step,
                &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
            );
            let k7 = f(t + step, &y_new);
            let mut err: f64 = 0.0;
            for i in 0..y.len() {
                let e = step
                    * (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7)
                        .norm();
                let tol = opts.atol + opts.rtol * y[i].norm().max(y_new[i].norm());
                err = err.max(e / tol);
            }
            if !err.is_finite() {
                h = step * 0.1;
                continue;
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                t = if last { target } else { t + step };
                y = y_new;
                k1 = k7;
                if !last {
                    h = step * factor;
                }
            } else {
                h = step * factor.min(1.0);
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return validation("sample times must be finite and non-negative");
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return validation("sample times must be strictly increasing");
    }
    Ok(())
}

/// Integrates `dρ/dt = L(t)ρ` from `t = 0`, returning the state at each
/// sample time. Local error per step is bounded by `atol + rtol·|y|`.
pub fn integrate<F>(
    liouvillian_at: F,
    rho0: &DensityMatrix,
    times: &[f64],
    opts: &RkOptions,
) -> Result<Trajectory>
where
    F: Fn(f64) -> Liouvillian,
{
    check_times(times)?;
    let first = liouvillian_at(0.0);
    let basis = first.basis();
    let omega0 = first.omega0();
    let model = first.kind();
    let start = in_basis(rho0, basis)?;
    let raw = dopri(
        |t, y| liouvillian_at(t).rotating().apply(y),
        start.matrix().vectorize(),
        times,
        opts,
    )?;
    Ok(to_trajectory(raw, times, basis, omega0, model))
}

/// [`integrate`] for a time-independent generator.
pub fn integrate_constant(
    liouvillian: &Liouvillian,
    rho0: &DensityMatrix,
    times: &[f64],
    opts: &RkOptions,
) -> Result<Trajectory> {
    check_times(times)?;
    let start = in_basis(rho0, liouvillian.basis())?;
    let generator = liouvillian.rotating();
    let raw = dopri(|_, y| generator.apply(y), start.matrix().vectorize(), times, opts)?;
    Ok(to_trajectory(
        raw,
        times,
        liouvillian.basis(),
        liouvillian.omega0(),
        liouvillian.kind(),
    ))
}

fn to_trajectory(
    raw: Vec<Vec<Complex64>>,
    times: &[f64],
    basis: crate::linalg::Basis,
    omega0: f64,
    model: Option<ModelKind>,
) -> Trajectory {
    let states = raw
        .into_iter()
        .zip(times)
        .map(|(v, &t)| {
            let mut m = ComplexMatrix::unvectorize(&v);
            to_lab_frame(&mut m, omega0, t);
            DensityMatrix::new_unchecked(m, basis)
        })
        .collect();
    Trajectory {
        times: times.to_vec(),
        states,
        model,
    }
}

/// `exp(L t)·ρ₀` by a matrix exponential of the rotating-frame generator.
/// Unlike an eigendecomposition this stays exact for defective generators.
pub fn propagate_exact(liouvillian: &Liouvillian, rho0: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
    if !(t.is_finite() && t >= 0.0) {
        return validation(format!("time must be finite and non-negative, got {t}"));
    }
    let start = in_basis(rho0, liouvillian.basis())?;
    let generator = liouvillian.rotating().scale(c(t));
    let v = expm_apply(&generator, &start.matrix().vectorize());
    let mut m = ComplexMatrix::unvectorize(&v);
    to_lab_frame(&mut m, liouvillian.omega0(), t);
    Ok(DensityMatrix::new_unchecked(m, liouvillian.basis()))
}

/// Product of `n` short-time propagators `exp(L(g_j)Δt)` with the coupling
/// frozen at the midpoint of each interval.
pub fn nstep_propagate(
    kind: &ModelKind,
    params: &PhysicalParams,
    profile: &Profile,
    rho0: &DensityMatrix,
    t: f64,
    n: usize,
) -> Result<DensityMatrix> {
    if n == 0 {
        return validation("n-step propagation needs n >= 1");
    }
    if !(t.is_finite() && t >= 0.0) {
        return validation(format!("time must be finite and non-negative, got {t}"));
    }
    kind.validate()?;
    let generator = AffineGenerator::new(kind);
    let start = in_basis(rho0, kind.basis())?;
    let dt = t / n as f64;
    let mut v = start.matrix().vectorize();
    for j in 0..n {
        let g = match profile {
            Profile::Constant => params.g(),
            Profile::Gaussian { geometry } => {
                gaussian_coupling(params.g(), geometry, t, (j as f64 + 0.5) * dt)
            }
        };
        v = expm_apply(&generator.at(g).scale(c(dt)), &v);
    }
    let mut m = ComplexMatrix::unvectorize(&v);
    to_lab_frame(&mut m, params.omega0(), t);
    Ok(DensityMatrix::new_unchecked(m, kind.basis()))
}

/// [`nstep_propagate`] over many final times in parallel.
pub fn nstep_series(
    kind: &ModelKind,
    params: &PhysicalParams,
    profile: &Profile,
    rho0: &DensityMatrix,
    times: &[f64],
    n: usize,
) -> Result<Vec<DensityMatrix>> {
    times
        .par_iter()
        .map(|&t| nstep_propagate(kind, params, profile, rho0, t, n))
        .collect()
}
