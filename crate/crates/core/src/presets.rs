//! Parameters of the microwave-cavity experiment the models are calibrated
//! against: a rubidium Rydberg transition at 51.099 GHz in a 0.8 K cavity.

use std::f64::consts::PI;

use crate::evolve::CavityGeometry;
use crate::models::{PhysicalParams, SimplifiedRates};

/// Transition frequency (rad/s).
pub const RESONANCE: f64 = 2.0 * PI * 51.099e9;
/// Peak atom-field coupling (rad/s).
pub const COUPLING: f64 = 47.0e3 * PI;
pub const TEMPERATURE: f64 = 0.8;
/// Mode waist and mirror diameter (m).
pub const WAIST: f64 = 5.96e-3;
pub const DIAMETER: f64 = 50e-3;
/// Inter-manifold decay rate (1/s).
pub const CAVITY_RATE: f64 = 17.73;
/// Intra-manifold rate as a fraction of the coupling.
pub const INTRA_RATE_RATIO: f64 = 0.07;
/// Phenomenological loss rate as a fraction of the coupling.
pub const PHENOM_RATE_RATIO: f64 = 0.3;

pub fn params() -> PhysicalParams {
    PhysicalParams::new(RESONANCE, COUPLING, TEMPERATURE).expect("preset parameters are valid")
}

pub fn geometry() -> CavityGeometry {
    CavityGeometry::new(WAIST, DIAMETER, None).expect("preset geometry is valid")
}

/// Equal inter-manifold rates, intra-manifold rate `0.07·g`, upward rates
/// fixed by the cavity temperature.
pub fn rates() -> SimplifiedRates {
    SimplifiedRates::new(
        CAVITY_RATE,
        CAVITY_RATE,
        INTRA_RATE_RATIO * COUPLING,
        params().epsilon(),
    )
    .expect("preset rates are valid")
}
