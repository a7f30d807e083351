//! Averaging over an uncertain interaction time with a gamma-distributed
//! kernel of mean `t` and variance `t·Δt`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::closed_form::{energy_mean, opencavity_pg, EnergyTerms, GroundTerms};
use crate::error::{validation, Result};
use crate::evolve::Profile;
use crate::models::{PhysicalParams, SimplifiedRates};
use crate::quad;

/// Relative tolerance of the numerical convolution.
pub const QUADRATURE_RTOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeUncertainty {
    delta_t: f64,
}

impl TimeUncertainty {
    pub fn new(delta_t: f64) -> Result<Self> {
        if !(delta_t >= 0.0 && delta_t.is_finite()) {
            return validation(format!("time uncertainty must be non-negative, got {delta_t}"));
        }
        Ok(Self { delta_t })
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }
}

/// `e^{−t′/Δt}(t′/Δt)^{t/Δt−1} / (Δt·Γ(t/Δt))`.
///
/// `Δt = 0` is the identity (a delta at `t′ = t`) and has no density; the
/// convolution functions handle it directly.
pub fn gamma_kernel(t: f64, t_prime: f64, delta_t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return validation(format!("kernel time must be positive, got {t}"));
    }
    if !(t_prime >= 0.0 && t_prime.is_finite()) {
        return validation(format!("integration time must be non-negative, got {t_prime}"));
    }
    if !(delta_t > 0.0 && delta_t.is_finite()) {
        return validation(format!("kernel width must be positive, got {delta_t}"));
    }
    let k = t / delta_t;
    let y = t_prime / delta_t;
    if y == 0.0 {
        return Ok(match k.partial_cmp(&1.0) {
            Some(std::cmp::Ordering::Greater) => 0.0,
            Some(std::cmp::Ordering::Equal) => 1.0 / delta_t,
            _ => f64::INFINITY,
        });
    }
    Ok(((k - 1.0) * y.ln() - y - ln_gamma(k)).exp() / delta_t)
}

/// `∫₀^∞ kernel(t, t′)·f(t′) dt′` by adaptive Gauss-Kronrod.
pub fn convolve_numeric<F: Fn(f64) -> f64>(f: F, t: f64, delta_t: f64) -> Result<f64> {
    TimeUncertainty::new(delta_t)?;
    if !(t >= 0.0 && t.is_finite()) {
        return validation(format!("time must be non-negative, got {t}"));
    }
    if delta_t == 0.0 || t == 0.0 {
        return Ok(f(t));
    }
    // scaled variable y = t′/Δt with shape k = t/Δt
    let k = t / delta_t;
    let ln_norm = ln_gamma(k);
    let upper = k + 12.0 * k.sqrt() + 30.0;
    let density = |y: f64| ((k - 1.0) * y.ln() - y - ln_norm).exp();
    if k <= 2.0 {
        // v = y^k removes the y^{k−1} endpoint behaviour on [0, 1]
        let ln_norm1 = ln_gamma(k + 1.0);
        let head = quad::integrate(
            |v: f64| {
                if v == 0.0 {
                    return (-ln_norm1).exp() * f(0.0);
                }
                let y = v.powf(1.0 / k);
                (-y - ln_norm1).exp() * f(y * delta_t)
            },
            0.0,
            1.0,
            QUADRATURE_RTOL,
        );
        let tail = quad::integrate(|y| density(y) * f(y * delta_t), 1.0, upper, QUADRATURE_RTOL);
        Ok(head + tail)
    } else {
        let lower = (k - 12.0 * k.sqrt() - 30.0).max(0.0);
        Ok(quad::integrate(
            |y| if y == 0.0 { 0.0 } else { density(y) * f(y * delta_t) },
            lower,
            upper,
            QUADRATURE_RTOL,
        ))
    }
}

/// Kernel average of `e^{−κt′}`: `(1 + κΔt)^{−t/Δt}`.
pub fn convolved_exponential(kappa: f64, t: f64, delta_t: f64) -> f64 {
    if delta_t == 0.0 {
        return (-kappa * t).exp();
    }
    (-(t / delta_t) * (kappa * delta_t).ln_1p()).exp()
}

/// Envelope of the kernel average of `e^{−Γt′}cos(ωt′)`:
/// `[(1+ΓΔt)² + ω²Δt²]^{−t/(2Δt)}`.
pub fn convolved_envelope(rate: f64, omega: f64, t: f64, delta_t: f64) -> f64 {
    if delta_t == 0.0 {
        return (-rate * t).exp();
    }
    let x = 2.0 * rate * delta_t + (rate * rate + omega * omega) * delta_t * delta_t;
    (-(t / (2.0 * delta_t)) * x.ln_1p()).exp()
}

/// Kernel average of `e^{−Γt′}cos(ωt′)`.
pub fn convolved_oscillation(rate: f64, omega: f64, t: f64, delta_t: f64) -> f64 {
    let phase = if delta_t == 0.0 {
        omega * t
    } else {
        (t / delta_t) * (omega * delta_t / (1.0 + rate * delta_t)).atan()
    };
    convolved_envelope(rate, omega, t, delta_t) * phase.cos()
}

impl GroundTerms {
    pub fn eval_convolved(&self, t: f64, delta_t: f64) -> f64 {
        let decays: f64 = self
            .exponentials
            .iter()
            .map(|&(coef, rate)| coef * convolved_exponential(rate, t, delta_t))
            .sum();
        self.asymptote
            + decays
            + self.amplitude * convolved_oscillation(self.envelope_rate, self.frequency, t, delta_t)
    }
}

impl EnergyTerms {
    pub fn eval_convolved(&self, t: f64, delta_t: f64) -> f64 {
        self.constant
            + self
                .exponentials
                .iter()
                .map(|&(coef, rate)| coef * convolved_exponential(rate, t, delta_t))
                .sum::<f64>()
    }
}

fn check_inputs(rates: &SimplifiedRates, delta_t: f64, t: f64) -> Result<()> {
    rates.validate()?;
    TimeUncertainty::new(delta_t)?;
    if !(t >= 0.0 && t.is_finite()) {
        return validation(format!("time must be non-negative, got {t}"));
    }
    Ok(())
}

/// Kernel-averaged ground-state probability of the open-cavity model.
pub fn convolve_pg(
    rates: &SimplifiedRates,
    params: &PhysicalParams,
    profile: &Profile,
    delta_t: f64,
    t: f64,
) -> Result<f64> {
    check_inputs(rates, delta_t, t)?;
    match GroundTerms::new(rates, profile.phase_coupling(params.g())) {
        Some(terms) => Ok(terms.eval_convolved(t, delta_t)),
        None => {
            let f = |s: f64| opencavity_pg(rates, params, s, profile).unwrap_or(f64::NAN);
            convolve_numeric(f, t, delta_t)
        }
    }
}

/// Kernel-averaged mean energy (rad/s) of the open-cavity model.
pub fn convolve_energy(rates: &SimplifiedRates, params: &PhysicalParams, delta_t: f64, t: f64) -> Result<f64> {
    check_inputs(rates, delta_t, t)?;
    match EnergyTerms::new(rates, params) {
        Some(terms) => Ok(terms.eval_convolved(t, delta_t)),
        None => {
            let f = |s: f64| energy_mean(rates, params, s).unwrap_or(f64::NAN);
            convolve_numeric(f, t, delta_t)
        }
    }
}
