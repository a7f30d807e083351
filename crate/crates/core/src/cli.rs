//! Command-line front end. Reads a JSON run configuration, applies flag
//! overrides and writes tidy CSV.
//!
//! Units at the boundary: µs for times, 1/s for rates, rad/s for
//! frequencies and couplings, mm for geometry.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_form::{energy_mean, energy_of, opencavity_pg, opencavity_rho, phenom_t0_rho, scala_rho};
use crate::davies::{assemble_generator, davies_decompose, truncate_to_subspace, SpectralWeights};
use crate::dephase::{convolve_energy, convolve_numeric, convolve_pg};
use crate::entangle::{coherence_of, embed4, ppt_spectrum};
use crate::error::{Error, Result};
use crate::evolve::{nstep_propagate, propagate_exact, CavityGeometry, Profile};
use crate::fitting::{
    fit_q, fit_rabi, rate_from_q, ExperimentSeries, FreeParam, LmOptions, RabiFitSpec, RabiModel,
    SeriesPoint, TimeConvention,
};
use crate::linalg::{Basis, DensityMatrix};
use crate::models::{
    build_liouvillian, ground_probability, in_basis, DecayRates, Liouvillian, ModelKind, PhysicalParams,
    SimplifiedRates,
};
use crate::{presets, verify};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NO_CONVERGENCE: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ModelName {
    PhenomT0,
    PhenomT,
    Microscopic,
    OpenCavity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    Constant,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelName,
    /// Loss rate of the phenomenological models (1/s).
    pub gamma: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    /// Ratio of upward to downward rates; derived from the temperature if absent.
    /// Upward-to-downward ratio; taken from the temperature when absent.
    pub eps: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelName::OpenCavity,
            gamma: presets::PHENOM_RATE_RATIO * presets::COUPLING,
            gamma1: presets::CAVITY_RATE,
            gamma2: presets::CAVITY_RATE,
            gamma3: presets::INTRA_RATE_RATIO * presets::COUPLING,
            eps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    pub omega0: f64,
    pub g: f64,
    pub temperature: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            omega0: presets::RESONANCE,
            g: presets::COUPLING,
            temperature: presets::TEMPERATURE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub waist_mm: f64,
    pub diameter_mm: f64,
    /// Atom velocity (m/s); by default one diameter per run.
    /// m/s; the atom crosses the mirror in the run time when absent.
    pub velocity: Option<f64>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            waist_mm: presets::WAIST * 1e3,
            diameter_mm: presets::DIAMETER * 1e3,
            velocity: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub start_us: f64,
    pub end_us: f64,
    pub step_us: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            start_us: 0.0,
            end_us: 430.0,
            step_us: 1.0,
        }
    }
}

impl GridConfig {
    /// Grid points in µs, `start + k·step` up to `end` inclusive.
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.end_us - self.start_us) / self.step_us * (1.0 + 1e-12)).floor() as usize;
        (0..=n).map(|k| self.start_us + k as f64 * self.step_us).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub free: Vec<FreeParam>,
    /// Input CSV.
    pub tie_gamma12: bool,
    pub data: Option<PathBuf>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            free: vec![FreeParam::Gamma1, FreeParam::Gamma3],
            tie_gamma12: true,
            data: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DaviesConfig {
    /// Inter- and intra-manifold coupling strengths of the reservoir.
    pub alpha: f64,
    pub beta: f64,
    pub n_max: usize,
}

impl Default for DaviesConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            beta: 0.5,
            n_max: 3,
        }
    }
}

/// Complete description of a run. Every field has a default and a flag.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub physics: PhysicsConfig,
    /// Coupling seen along the atom's path.
    pub geometry: GeometryConfig,
    pub profile: Option<ProfileName>,
    /// Factors in the product propagator for the Gaussian profile.
    pub delta_t_us: f64,
    pub nstep: Option<usize>,
    /// Whether data times are true or effective (`true`, `effective`).
    pub grid: GridConfig,
    pub time_convention: Option<TimeConvention>,
    pub fit: FitConfig,
    /// Write CSV here instead of stdout.
    pub davies: DaviesConfig,
    pub output: Option<PathBuf>,
}

const DEFAULT_NSTEP: usize = 1001;

impl RunConfig {
    /// Parses a JSON document; errors carry line and column.
    pub fn from_json(text: &str) -> std::result::Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn validate(&self) -> std::result::Result<(), CliError> {
        let bad = |field: &str, why: &str| Err(CliError::Config(format!("config field `{field}`: {why}")));
        let g = &self.grid;
        if !(g.step_us.is_finite() && g.step_us > 0.0) {
            return bad("grid.step_us", "must be positive");
        }
        if !(g.start_us.is_finite() && g.start_us >= 0.0) {
            return bad("grid.start_us", "must be non-negative");
        }
        if !(g.end_us.is_finite() && g.end_us > g.start_us) {
            return bad("grid.end_us", "must exceed grid.start_us");
        }
        if !(self.delta_t_us.is_finite() && self.delta_t_us >= 0.0) {
            return bad("delta_t_us", "must be non-negative");
        }
        if self.nstep == Some(0) {
            return bad("nstep", "must be at least 1");
        }
        Ok(())
    }

    fn profile_name(&self) -> ProfileName {
        self.profile.unwrap_or(ProfileName::Gaussian)
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Run(Error::NonConvergence { .. }) => EXIT_NO_CONVERGENCE,
            CliError::Run(Error::Json(_)) => EXIT_USAGE,
            CliError::Run(_) => EXIT_VALIDATION,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Run(Error::Io(e))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Run(csv_error(e))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "cavity-rabi", version, about = "Damped vacuum Rabi oscillations in lossy cavities")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Subcommand, Debug, Clone, PartialEq)]
pub enum Command {
    /// Ground-state probability and density matrix on the time grid.
    Simulate,
    /// Mean energy on the time grid.
    Energy,
    /// Partial-transpose spectrum and coherence on the time grid.
    Entangle,
    /// Fit the open-cavity model to a `t_us,p_g[,sigma]` data file.
    FitRabi,
    /// Fit a quality factor to the mean energy, simulated or from a
    /// `t_us,energy` file.
    FitQ,
    /// Compare the reservoir-derived generator with the open-cavity one.
    DaviesCheck,
    /// Run the built-in verification suite.
    Verify,
}

#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dissipative model.
    #[arg(long, global = true, value_enum)]
    pub model: Option<ModelName>,
    /// Loss rate of the phenomenological models (1/s).
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// |Ω₊⟩ → |Ω₀⟩ rate (1/s).
    #[arg(long, global = true)]
    pub gamma1: Option<f64>,
    /// |Ω₋⟩ → |Ω₀⟩ rate (1/s).
    #[arg(long, global = true)]
    pub gamma2: Option<f64>,
    /// |Ω₊⟩ → |Ω₋⟩ rate (1/s).
    #[arg(long, global = true)]
    pub gamma3: Option<f64>,
    /// Ratio of upward to downward rates; derived from the temperature if absent.
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Transition frequency (rad/s).
    #[arg(long, global = true)]
    pub omega0: Option<f64>,
    /// Peak coupling (rad/s).
    #[arg(long, global = true)]
    pub g: Option<f64>,
    /// Cavity temperature (K).
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    /// Mode waist (mm).
    #[arg(long, global = true)]
    pub waist_mm: Option<f64>,
    /// Mirror diameter (mm).
    #[arg(long, global = true)]
    pub diameter_mm: Option<f64>,
    /// Atom velocity (m/s); by default one diameter per run.
    #[arg(long, global = true)]
    pub velocity: Option<f64>,
    /// Coupling seen along the atom's path.
    #[arg(long, global = true, value_enum)]
    pub profile: Option<ProfileName>,
    /// Timing uncertainty (µs); 0 disables the averaging.
    #[arg(long, global = true)]
    pub delta_t_us: Option<f64>,
    /// Factors in the product propagator for the Gaussian profile.
    #[arg(long, global = true)]
    pub nstep: Option<usize>,
    /// First grid time (µs).
    #[arg(long, global = true)]
    pub start_us: Option<f64>,
    /// Last grid time (µs).
    #[arg(long, global = true)]
    pub end_us: Option<f64>,
    /// Grid spacing (µs).
    #[arg(long, global = true)]
    pub step_us: Option<f64>,
    /// Whether data times are true or effective (`true`, `effective`).
    #[arg(long, global = true)]
    pub time_convention: Option<TimeConvention>,
    /// Comma-separated fit parameters: gamma1, gamma2, gamma3, delta_t.
    #[arg(long, global = true, value_delimiter = ',', value_parser = parse_free)]
    pub free: Option<Vec<FreeParam>>,
    /// Fit one shared value for gamma1 and gamma2.
    #[arg(long, global = true)]
    pub tie_gamma12: Option<bool>,
    /// Input CSV.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Inter-manifold coupling strength of the reservoir.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Intra-manifold coupling strength of the reservoir.
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Highest excitation manifold kept in the reservoir decomposition.
    #[arg(long, global = true)]
    pub n_max: Option<usize>,
    /// Write CSV here instead of stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// `name=start:end:count` over gamma, gamma1, gamma2, gamma3 or
    /// delta_t_us.
    #[arg(long, global = true, value_parser = parse_sweep)]
    pub sweep: Option<Sweep>,
}

fn parse_free(s: &str) -> std::result::Result<FreeParam, String> {
    match s {
        "gamma1" => Ok(FreeParam::Gamma1),
        "gamma2" => Ok(FreeParam::Gamma2),
        "gamma3" => Ok(FreeParam::Gamma3),
        "delta_t" => Ok(FreeParam::DeltaT),
        other => Err(format!("unknown fit parameter '{other}'")),
    }
}

/// A linear parameter sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub name: String,
    pub values: Vec<f64>,
}

const SWEEPABLE: [&str; 5] = ["gamma", "gamma1", "gamma2", "gamma3", "delta_t_us"];

pub fn parse_sweep(s: &str) -> std::result::Result<Sweep, String> {
    let (name, range) = s.split_once('=').ok_or("expected name=start:end:count")?;
    if !SWEEPABLE.contains(&name) {
        return Err(format!("cannot sweep '{name}' (one of {})", SWEEPABLE.join(", ")));
    }
    let parts: Vec<&str> = range.split(':').collect();
    let [a, b, n] = parts[..] else {
        return Err("expected start:end:count".into());
    };
    let a: f64 = a.parse().map_err(|_| format!("bad sweep start '{a}'"))?;
    let b: f64 = b.parse().map_err(|_| format!("bad sweep end '{b}'"))?;
    let n: usize = n.parse().map_err(|_| format!("bad sweep count '{n}'"))?;
    if n == 0 || !a.is_finite() || !b.is_finite() {
        return Err("sweep needs finite bounds and count >= 1".into());
    }
    let values = if n == 1 {
        vec![a]
    } else {
        (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
    };
    Ok(Sweep {
        name: name.to_string(),
        values,
    })
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
            if let Some(v) = value {
                *slot = v.clone();
            }
        }
        set(&mut cfg.model.kind, &self.model);
        set(&mut cfg.model.gamma, &self.gamma);
        set(&mut cfg.model.gamma1, &self.gamma1);
        set(&mut cfg.model.gamma2, &self.gamma2);
        set(&mut cfg.model.gamma3, &self.gamma3);
        if self.eps.is_some() {
            cfg.model.eps = self.eps;
        }
        set(&mut cfg.physics.omega0, &self.omega0);
        set(&mut cfg.physics.g, &self.g);
        set(&mut cfg.physics.temperature, &self.temperature);
        set(&mut cfg.geometry.waist_mm, &self.waist_mm);
        set(&mut cfg.geometry.diameter_mm, &self.diameter_mm);
        if self.velocity.is_some() {
            cfg.geometry.velocity = self.velocity;
        }
        if self.profile.is_some() {
            cfg.profile = self.profile;
        }
        set(&mut cfg.delta_t_us, &self.delta_t_us);
        if self.nstep.is_some() {
            cfg.nstep = self.nstep;
        }
        set(&mut cfg.grid.start_us, &self.start_us);
        set(&mut cfg.grid.end_us, &self.end_us);
        set(&mut cfg.grid.step_us, &self.step_us);
        if self.time_convention.is_some() {
            cfg.time_convention = self.time_convention;
        }
        set(&mut cfg.fit.free, &self.free);
        set(&mut cfg.fit.tie_gamma12, &self.tie_gamma12);
        if self.data.is_some() {
            cfg.fit.data = self.data.clone();
        }
        set(&mut cfg.davies.alpha, &self.alpha);
        set(&mut cfg.davies.beta, &self.beta);
        set(&mut cfg.davies.n_max, &self.n_max);
        if self.output.is_some() {
            cfg.output = self.output.clone();
        }
    }
}

fn with_sweep_value(cfg: &RunConfig, name: &str, value: f64) -> RunConfig {
    let mut c = cfg.clone();
    match name {
        "gamma" => c.model.gamma = value,
        "gamma1" => c.model.gamma1 = value,
        "gamma2" => c.model.gamma2 = value,
        "gamma3" => c.model.gamma3 = value,
        _ => c.delta_t_us = value,
    }
    c
}

/// Everything needed to evaluate the configured model at a time.
pub struct Setup {
    pub params: PhysicalParams,
    pub kind: ModelKind,
    pub rates: Option<SimplifiedRates>,
    pub profile: Profile,
    /// Seconds.
    pub delta_t: f64,
    nstep: usize,
    liouvillian: Liouvillian,
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let ph = &cfg.physics;
        let params = PhysicalParams::new(ph.omega0, ph.g, ph.temperature)?;
        let geometry = CavityGeometry::new(
            cfg.geometry.waist_mm * 1e-3,
            cfg.geometry.diameter_mm * 1e-3,
            cfg.geometry.velocity,
        )?;
        let profile = match cfg.profile_name() {
            ProfileName::Constant => Profile::Constant,
            ProfileName::Gaussian => Profile::Gaussian { geometry },
        };
        let m = &cfg.model;
        let eps = m.eps.unwrap_or_else(|| params.epsilon());
        let (kind, rates) = match m.kind {
            ModelName::PhenomT0 => (ModelKind::PhenomT0 { gamma: m.gamma }, None),
            ModelName::PhenomT => (
                ModelKind::PhenomT {
                    gamma_down: m.gamma,
                    gamma_up: eps * m.gamma,
                },
                None,
            ),
            ModelName::Microscopic => (
                ModelKind::Microscopic {
                    gamma1: m.gamma1,
                    gamma2: m.gamma2,
                },
                None,
            ),
            ModelName::OpenCavity => {
                let rates = SimplifiedRates::new(m.gamma1, m.gamma2, m.gamma3, eps)?;
                (ModelKind::open_cavity(rates.expand()), Some(rates))
            }
        };
        let liouvillian = build_liouvillian(kind, &params)?;
        Ok(Self {
            params,
            kind,
            rates,
            profile,
            delta_t: cfg.delta_t_us * 1e-6,
            nstep: cfg.nstep.unwrap_or(DEFAULT_NSTEP),
            liouvillian,
        })
    }

    /// State at time `t` (s), from a closed form where one exists.
    pub fn state(&self, t: f64) -> Result<DensityMatrix> {
        let g = self.params.g();
        match (self.kind, self.profile) {
            (ModelKind::OpenCavity { .. }, _) => {
                let rates = self.rates.expect("open-cavity setup keeps its rates");
                Ok(opencavity_rho(&rates, &self.params, t, &self.profile)?.rho)
            }
            (ModelKind::Microscopic { gamma1, gamma2 }, profile) => {
                scala_rho(profile.phase_coupling(g), gamma1, gamma2, t)
            }
            (ModelKind::PhenomT0 { gamma }, Profile::Constant) => Ok(phenom_t0_rho(g, gamma, t)?.rho),
            (_, Profile::Constant) => propagate_exact(&self.liouvillian, &DensityMatrix::excited_vacuum(), t),
            (kind, profile) => nstep_propagate(
                &kind,
                &self.params,
                &profile,
                &DensityMatrix::excited_vacuum(),
                t,
                self.nstep,
            ),
        }
    }

    pub fn ground_probability(&self, t: f64) -> Result<f64> {
        match self.rates {
            Some(rates) => opencavity_pg(&rates, &self.params, t, &self.profile),
            None => Ok(ground_probability(&self.state(t)?)),
        }
    }

    pub fn ground_probability_convolved(&self, t: f64) -> Result<f64> {
        if self.delta_t == 0.0 {
            return self.ground_probability(t);
        }
        match self.rates {
            Some(rates) => convolve_pg(&rates, &self.params, &self.profile, self.delta_t, t),
            None => convolve_numeric(|s| self.ground_probability(s).unwrap_or(f64::NAN), t, self.delta_t),
        }
    }

    pub fn energy(&self, t: f64) -> Result<f64> {
        match self.rates {
            Some(rates) => energy_mean(&rates, &self.params, t),
            None => energy_of(&self.state(t)?, &self.params),
        }
    }

    pub fn energy_convolved(&self, t: f64) -> Result<f64> {
        if self.delta_t == 0.0 {
            return self.energy(t);
        }
        match self.rates {
            Some(rates) => convolve_energy(&rates, &self.params, self.delta_t, t),
            None => convolve_numeric(|s| self.energy(s).unwrap_or(f64::NAN), t, self.delta_t),
        }
    }
}

/// Shortest decimal that reads back to the same `f64`, in exponent form
/// for very small or very large magnitudes.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !a.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// The decimal text of `x·10^shift`, built from the shortest digits of `x`
/// by moving the decimal point, so that no rounding is introduced.
pub fn shifted_decimal(x: f64, shift: i32) -> String {
    if x == 0.0 || !x.is_finite() {
        return num(x);
    }
    let sci = format!("{x:e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp = exp.parse::<i32>().expect("integer exponent") + shift;
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    // value = 0.d1d2… × 10^(exp+1)
    let point = exp + 1;
    let n = digits.len() as i32;
    let body = if point <= 0 {
        format!("0.{}{}", "0".repeat((-point) as usize), digits)
    } else if point >= n {
        format!("{}{}", digits, "0".repeat((point - n) as usize))
    } else {
        format!("{}.{}", &digits[..point as usize], &digits[point as usize..])
    };
    format!("{sign}{body}")
}

/// Parses decimal text and scales it by `10^shift` before rounding, so the
/// result is the `f64` nearest the scaled decimal value.
fn parse_shifted(text: &str, shift: i32) -> Option<f64> {
    let text = text.trim();
    let (mantissa, exp) = match text.find(['e', 'E']) {
        Some(i) => (&text[..i], text[i + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    mantissa.parse::<f64>().ok()?;
    format!("{mantissa}e{}", exp + shift).parse().ok()
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Reads a `t_us,p_g[,sigma]` file into a series with times in seconds.
pub fn ingest_series(path: &Path, convention: TimeConvention) -> Result<ExperimentSeries> {
    read_series(BufReader::new(File::open(path)?), convention)
}

pub fn read_series<R: Read>(reader: R, convention: TimeConvention) -> Result<ExperimentSeries> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h.map_err(csv_error)?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty file; expected header t_us,p_g[,sigma]".into(),
            })
        }
    };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let with_sigma = match names[..] {
        ["t_us", "p_g"] => false,
        ["t_us", "p_g", "sigma"] => true,
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header t_us,p_g[,sigma], found '{}'", names.join(",")),
            })
        }
    };
    let mut points: Vec<SeriesPoint> = Vec::new();
    for record in records {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |message: String| Error::Parse { line, message };
        let field = |i: usize, name: &str| -> Result<&str> {
            record.get(i).ok_or_else(|| bad(format!("missing {name}")))
        };
        let t_text = field(0, "t_us")?;
        let time = parse_shifted(t_text, -6).ok_or_else(|| bad(format!("t_us '{t_text}' is not a number")))?;
        let p_text = field(1, "p_g")?.trim();
        let p_g: f64 = p_text.parse().map_err(|_| bad(format!("p_g '{p_text}' is not a number")))?;
        let sigma = if with_sigma {
            match field(2, "sigma")?.trim() {
                "" => None,
                s => Some(s.parse::<f64>().map_err(|_| bad(format!("sigma '{s}' is not a number")))?),
            }
        } else {
            None
        };
        if !(time.is_finite() && time >= 0.0) {
            return Err(bad(format!("t_us = {t_text} must be finite and non-negative")));
        }
        if !(0.0..=1.0).contains(&p_g) {
            return Err(bad(format!("p_g = {p_text} outside [0, 1]")));
        }
        if let Some(s) = sigma {
            if !(s.is_finite() && s >= 0.0) {
                return Err(bad(format!("sigma = {s} must be non-negative")));
            }
        }
        if points.last().is_some_and(|prev| time <= prev.time) {
            return Err(bad(format!("t_us = {t_text} does not increase")));
        }
        points.push(SeriesPoint { time, p_g, sigma });
    }
    ExperimentSeries::new(points, convention)
}

/// Writes a series in the format read by [`read_series`].
pub fn write_series<W: Write>(series: &ExperimentSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let with_sigma = series.points().iter().any(|p| p.sigma.is_some());
    if with_sigma {
        w.write_record(["t_us", "p_g", "sigma"]).map_err(csv_error)?;
    } else {
        w.write_record(["t_us", "p_g"]).map_err(csv_error)?;
    }
    for p in series.points() {
        let mut row = vec![shifted_decimal(p.time, 6), num(p.p_g)];
        if with_sigma {
            row.push(p.sigma.map(num).unwrap_or_default());
        }
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `t_us,energy` pairs (energy in rad/s) with times in seconds.
fn read_energy(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(BufReader::new(File::open(path)?));
    let header: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(|s| s.trim().to_string()).collect();
    // Files written by `energy` carry a trailing convolved column, which is ignored.
    if !(header == ["t_us", "energy"] || header == ["t_us", "energy", "energy_convolved"]) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header t_us,energy[,energy_convolved], found '{}'", header.join(",")),
        });
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let parse = |i: usize, shift: i32| {
            record
                .get(i)
                .and_then(|s| parse_shifted(s, shift))
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("column {} is not a number", i + 1),
                })
        };
        out.push((parse(0, -6)?, parse(1, 0)?));
    }
    Ok(out)
}

type Table = (Vec<String>, Vec<Vec<String>>);

fn tabulate(cfg: &RunConfig, row: impl Fn(&Setup, f64, f64) -> Result<Vec<String>> + Sync) -> Result<Vec<Vec<String>>> {
    let setup = Setup::new(cfg)?;
    cfg.grid
        .points()
        .par_iter()
        .map(|&t_us| row(&setup, t_us, t_us * 1e-6))
        .collect()
}

const RHO_COLUMNS: [&str; 9] = [
    "rho_e0_e0",
    "rho_g1_g1",
    "rho_g0_g0",
    "rho_e0_g1_re",
    "rho_e0_g1_im",
    "rho_e0_g0_re",
    "rho_e0_g0_im",
    "rho_g1_g0_re",
    "rho_g1_g0_im",
];

fn simulate_table(cfg: &RunConfig) -> Result<Table> {
    let mut header: Vec<String> = ["t_us", "p_g", "p_g_convolved"].map(String::from).to_vec();
    header.extend(RHO_COLUMNS.map(String::from));
    let rows = tabulate(cfg, |setup, t_us, t| {
        let bare = in_basis(&setup.state(t)?, Basis::Bare)?;
        let mut row = vec![
            num(t_us),
            num(setup.ground_probability(t)?),
            num(setup.ground_probability_convolved(t)?),
        ];
        for i in 0..3 {
            row.push(num(bare.population(i)));
        }
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let z = bare.get(i, j);
            row.push(num(z.re));
            row.push(num(z.im));
        }
        Ok(row)
    })?;
    Ok((header, rows))
}

fn energy_table(cfg: &RunConfig) -> Result<Table> {
    let header = ["t_us", "energy", "energy_convolved"].map(String::from).to_vec();
    let rows = tabulate(cfg, |setup, t_us, t| {
        Ok(vec![num(t_us), num(setup.energy(t)?), num(setup.energy_convolved(t)?)])
    })?;
    Ok((header, rows))
}

fn entangle_table(cfg: &RunConfig) -> Result<Table> {
    let header = [
        "t_us",
        "lambda1",
        "lambda2",
        "lambda3",
        "lambda4",
        "coherence_re",
        "coherence_im",
    ]
    .map(String::from)
    .to_vec();
    let rows = tabulate(cfg, |setup, t_us, t| {
        let state = setup.state(t)?;
        let spectrum = ppt_spectrum(&embed4(&state)?)?;
        let coherence = coherence_of(&state)?;
        let mut row = vec![num(t_us)];
        row.extend(spectrum.lambda.iter().map(|&l| num(l)));
        row.push(num(coherence.re));
        row.push(num(coherence.im));
        Ok(row)
    })?;
    Ok((header, rows))
}

fn swept(cfg: &RunConfig, sweep: Option<&Sweep>, table: fn(&RunConfig) -> Result<Table>) -> Result<Table> {
    let Some(sweep) = sweep else {
        return table(cfg);
    };
    let tables = sweep
        .values
        .par_iter()
        .map(|&v| table(&with_sweep_value(cfg, &sweep.name, v)).map(|t| (v, t)))
        .collect::<Result<Vec<_>>>()?;
    let mut header = vec![sweep.name.clone()];
    let mut rows = Vec::new();
    for (v, (h, body)) in tables {
        if header.len() == 1 {
            header.extend(h);
        }
        for mut row in body {
            row.insert(0, num(v));
            rows.push(row);
        }
    }
    Ok((header, rows))
}

fn write_table<W: Write>(out: W, (header, rows): &Table) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn require_open_cavity(cfg: &RunConfig, command: &str) -> CliResult<()> {
    if cfg.model.kind != ModelName::OpenCavity {
        return Err(CliError::Usage(format!("{command} needs model open_cavity")));
    }
    Ok(())
}

fn fit_rabi_table(cfg: &RunConfig) -> CliResult<(Table, String)> {
    require_open_cavity(cfg, "fit-rabi")?;
    let path = cfg
        .fit
        .data
        .as_ref()
        .ok_or_else(|| CliError::Usage("fit-rabi needs --data <csv>".into()))?;
    let convention = cfg.time_convention.unwrap_or(TimeConvention::True);
    let series = ingest_series(path, convention)?;
    let setup = Setup::new(cfg)?;
    let rates = setup.rates.expect("open-cavity setup keeps its rates");
    let model = RabiModel {
        params: setup.params,
        eps: rates.eps,
        profile: setup.profile,
        gamma1: rates.gamma1,
        gamma2: rates.gamma2,
        gamma3: rates.gamma3,
        delta_t: setup.delta_t,
    };
    let spec = RabiFitSpec {
        free: cfg.fit.free.clone(),
        tie_gamma12: cfg.fit.tie_gamma12,
    };
    let fit = fit_rabi(&series, &model, &spec, &LmOptions::default())?;
    let header = ["parameter", "value", "standard_error"].map(String::from).to_vec();
    let rows = fit
        .names
        .iter()
        .zip(fit.parameters.iter().zip(&fit.standard_errors))
        .map(|(name, (&v, &e))| {
            if name == "delta_t" {
                vec!["delta_t_us".to_string(), num(v * 1e6), num(e * 1e6)]
            } else {
                vec![name.clone(), num(v), num(e)]
            }
        })
        .collect();
    let summary = format!("converged in {} iterations, cost {}", fit.iterations, num(fit.cost));
    Ok(((header, rows), summary))
}

fn fit_q_table(cfg: &RunConfig) -> CliResult<Table> {
    let setup = Setup::new(cfg)?;
    let convention = cfg.time_convention.unwrap_or(TimeConvention::True);
    let eps = cfg.model.eps.unwrap_or_else(|| setup.params.epsilon());
    let samples = match &cfg.fit.data {
        Some(path) => read_energy(path)?,
        None => cfg
            .grid
            .points()
            .iter()
            .map(|&t_us| Ok((t_us * 1e-6, setup.energy(t_us * 1e-6)?)))
            .collect::<Result<Vec<_>>>()?,
    };
    let fit = fit_q(&samples, eps, setup.params.omega0(), convention)?;
    let geometry = match setup.profile {
        Profile::Gaussian { geometry } => geometry,
        Profile::Constant => CavityGeometry::new(cfg.geometry.waist_mm * 1e-3, cfg.geometry.diameter_mm * 1e-3, None)?,
    };
    let gamma = rate_from_q(fit.q, eps, setup.params.omega0(), convention, &geometry);
    let convention_name = match convention {
        TimeConvention::True => "true",
        TimeConvention::Effective => "effective",
    };
    Ok((
        ["q", "q_error", "gamma", "time_convention"].map(String::from).to_vec(),
        vec![vec![num(fit.q), num(fit.q_error), num(gamma), convention_name.into()]],
    ))
}

fn davies_table(cfg: &RunConfig) -> CliResult<(Table, f64, f64)> {
    let ph = &cfg.physics;
    let params = PhysicalParams::new(ph.omega0, ph.g, ph.temperature)?;
    let d = &cfg.davies;
    let m = &cfg.model;
    let all = davies_decompose(d.alpha, d.beta, &params, d.n_max)?;
    let ops = truncate_to_subspace(&all);
    let weights = SpectralWeights::from_rates(m.gamma1, m.gamma2, m.gamma3, d.alpha, d.beta, &params)?;
    let assembled = assemble_generator(&ops, &weights, &params)?;
    let reference = build_liouvillian(
        ModelKind::open_cavity(DecayRates::thermal(m.gamma1, m.gamma2, m.gamma3, &params)),
        &params,
    )?;
    let gap = (assembled.matrix() - reference.matrix()).max_abs();
    let scale = m.gamma1.max(m.gamma2).max(m.gamma3).max(f64::MIN_POSITIVE);
    let rows = all
        .iter()
        .map(|op| vec![num(op.bohr_frequency), num(op.commutation_defect(&params))])
        .collect();
    let header = ["bohr_frequency", "commutation_defect"].map(String::from).to_vec();
    Ok(((header, rows), gap, scale))
}

fn open_output<'a>(cfg: &RunConfig, stdout: &'a mut dyn Write) -> CliResult<Box<dyn Write + 'a>> {
    Ok(match &cfg.output {
        Some(path) => Box::new(io::BufWriter::new(File::create(path)?)),
        None => Box::new(stdout),
    })
}

/// Loads the configuration named on the command line, if any, and applies
/// the flag overrides.
pub fn resolve_config(overrides: &Overrides) -> CliResult<RunConfig> {
    let mut cfg = match &overrides.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<i32> {
    let cfg = resolve_config(&cli.overrides)?;
    let sweep = cli.overrides.sweep.as_ref();
    let sweepable = matches!(cli.command, Command::Simulate | Command::Energy | Command::Entangle);
    if sweep.is_some() && !sweepable {
        return Err(CliError::Usage("--sweep applies to simulate, energy and entangle".into()));
    }
    match cli.command {
        Command::Simulate | Command::Energy | Command::Entangle => {
            let table = match cli.command {
                Command::Simulate => swept(&cfg, sweep, simulate_table)?,
                Command::Energy => swept(&cfg, sweep, energy_table)?,
                _ => swept(&cfg, sweep, entangle_table)?,
            };
            write_table(open_output(&cfg, stdout)?, &table)?;
            Ok(EXIT_OK)
        }
        Command::FitRabi => {
            let (table, summary) = fit_rabi_table(&cfg)?;
            write_table(open_output(&cfg, stdout)?, &table)?;
            writeln!(stderr, "{summary}")?;
            Ok(EXIT_OK)
        }
        Command::FitQ => {
            let table = fit_q_table(&cfg)?;
            write_table(open_output(&cfg, stdout)?, &table)?;
            Ok(EXIT_OK)
        }
        Command::DaviesCheck => {
            let (table, gap, scale) = davies_table(&cfg)?;
            write_table(open_output(&cfg, stdout)?, &table)?;
            let ok = gap <= 1e-12 * scale;
            writeln!(
                stderr,
                "generator gap {} (tolerance {}): {}",
                num(gap),
                num(1e-12 * scale),
                if ok { "equal" } else { "different" }
            )?;
            Ok(if ok { EXIT_OK } else { EXIT_VALIDATION })
        }
        Command::Verify => {
            let outcomes = verify::run_all();
            let mut out = open_output(&cfg, stdout)?;
            for o in &outcomes {
                writeln!(out, "{o}")?;
            }
            let passed = outcomes.iter().filter(|o| o.passed).count();
            writeln!(out, "{passed}/{} checks passed", outcomes.len())?;
            out.flush()?;
            Ok(if passed == outcomes.len() { EXIT_OK } else { EXIT_VALIDATION })
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 {
                let _ = write!(stdout, "{}", e.render());
                return EXIT_OK;
            }
            let _ = write!(stderr, "{}", e.render());
            return EXIT_USAGE;
        }
    };
    match execute(&cli, stdout, stderr) {
        Ok(code) => code,
        // A closed downstream pipe (`| head`) is not a failure.
        Err(CliError::Run(Error::Io(e))) if e.kind() == std::io::ErrorKind::BrokenPipe => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
