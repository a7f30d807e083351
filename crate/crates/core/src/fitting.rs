//! Levenberg-Marquardt least squares, quality-factor extraction and fits of
//! the open-cavity model to Rabi oscillation data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::closed_form::opencavity_pg;
use crate::dephase::convolve_pg;
use crate::error::{validation, Error, Result};
use crate::evolve::{true_time, CavityGeometry, Profile};
use crate::models::{PhysicalParams, SimplifiedRates};

/// Smallest singular value of the column-normalised Jacobian, relative to
/// the largest, below which the problem is declared rank deficient.
pub const RANK_RTOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub t: f64,
    pub y: f64,
    pub sigma: f64,
}

type ModelFn<'a> = Box<dyn Fn(&[f64], f64) -> Result<f64> + Sync + 'a>;

/// A weighted least-squares problem `min Σ ((y − f(p, t))/σ)²`.
pub struct FitProblem<'a> {
    model: ModelFn<'a>,
    data: Vec<DataPoint>,
    names: Vec<String>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    initial: Vec<f64>,
    scales: Vec<f64>,
    weighted: bool,
}

impl<'a> FitProblem<'a> {
    /// `sigma` of each point must be positive; pass `weighted = false` when
    /// the data carry no uncertainties (unit weights, errors rescaled by the
    /// residual variance).
    pub fn new(
        model: impl Fn(&[f64], f64) -> Result<f64> + Sync + 'a,
        data: Vec<DataPoint>,
        names: Vec<String>,
        initial: Vec<f64>,
        weighted: bool,
    ) -> Result<Self> {
        let n = names.len();
        if n == 0 {
            return validation("no free parameters");
        }
        if initial.len() != n {
            return validation("initial guess and parameter names differ in length");
        }
        if data.len() < n {
            return validation(format!("{} data points cannot determine {} parameters", data.len(), n));
        }
        if let Some((i, _)) = data.iter().enumerate().find(|(_, d)| !(d.sigma > 0.0 && d.sigma.is_finite())) {
            return validation(format!("data point {i} has non-positive sigma"));
        }
        if data.iter().any(|d| !d.t.is_finite() || !d.y.is_finite()) {
            return validation("data contain non-finite values");
        }
        if initial.iter().any(|p| !p.is_finite()) {
            return validation("initial guess contains non-finite values");
        }
        let scales = initial.iter().map(|p| if *p != 0.0 { p.abs() } else { 1.0 }).collect();
        Ok(Self {
            model: Box::new(model),
            data,
            names,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            initial,
            scales,
            weighted,
        })
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = self.names.len();
        if lower.len() != n || upper.len() != n {
            return validation("bounds and parameter names differ in length");
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return validation("lower bound exceeds upper bound");
        }
        self.lower = lower;
        self.upper = upper;
        self.initial = self.clamp(self.initial.clone());
        Ok(self)
    }

    /// Typical magnitudes used to scale the parameters; defaults to the
    /// initial guess (1 where it is zero).
    pub fn with_scales(mut self, scales: Vec<f64>) -> Result<Self> {
        if scales.len() != self.names.len() || scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return validation("scales must be positive, one per parameter");
        }
        self.scales = scales;
        Ok(self)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn clamp(&self, mut p: Vec<f64>) -> Vec<f64> {
        for (j, v) in p.iter_mut().enumerate() {
            *v = v.clamp(self.lower[j], self.upper[j]);
        }
        p
    }

    fn residuals(&self, p: &[f64]) -> Result<DVector<f64>> {
        let mut r = DVector::zeros(self.data.len());
        for (i, d) in self.data.iter().enumerate() {
            let f = (self.model)(p, d.t)?;
            if !f.is_finite() {
                return validation(format!("model is not finite at t = {:e}", d.t));
            }
            r[i] = (d.y - f) / d.sigma;
        }
        Ok(r)
    }

    /// Jacobian of the residuals with respect to the scaled parameters
    /// `u = p/scale`, by forward differences.
    fn jacobian(&self, p: &[f64], r: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = p.len();
        let mut jac = DMatrix::zeros(self.data.len(), n);
        for j in 0..n {
            let mut h = 1e-7 * p[j].abs().max(self.scales[j]);
            if p[j] + h > self.upper[j] {
                h = -h;
            }
            let mut shifted = p.to_vec();
            shifted[j] += h;
            let rs = self.residuals(&shifted)?;
            let step = shifted[j] - p[j];
            let col = (rs - r) * (self.scales[j] / step);
            jac.set_column(j, &col);
        }
        Ok(jac)
    }

    /// Errors with the parameter combination along which the Jacobian is
    /// (numerically) flat.
    fn check_rank(&self, jac: &DMatrix<f64>) -> Result<()> {
        let n = jac.ncols();
        let norms: Vec<f64> = (0..n).map(|j| jac.column(j).norm()).collect();
        let largest = norms.iter().copied().fold(0.0, f64::max);
        if largest == 0.0 {
            return Err(Error::RankDeficient {
                combination: self.names.join(", "),
            });
        }
        if let Some(j) = norms.iter().position(|&v| v <= RANK_RTOL * largest) {
            return Err(Error::RankDeficient {
                combination: self.names[j].clone(),
            });
        }
        let mut normalized = jac.clone();
        for j in 0..n {
            normalized.column_mut(j).scale_mut(1.0 / norms[j]);
        }
        let svd = normalized.svd(false, true);
        let values = &svd.singular_values;
        let (imin, smin) = values.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &s)| {
            if s < acc.1 {
                (i, s)
            } else {
                acc
            }
        });
        let smax = values.iter().copied().fold(0.0, f64::max);
        if smin <= RANK_RTOL * smax {
            let v_t = svd.v_t.expect("requested right singular vectors");
            let v: Vec<f64> = (0..n).map(|j| v_t[(imin, j)]).collect();
            return Err(Error::RankDeficient {
                combination: self.combination(&v),
            });
        }
        Ok(())
    }

    fn combination(&self, v: &[f64]) -> String {
        let peak = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let terms: Vec<(f64, &str)> = v
            .iter()
            .zip(&self.names)
            .filter(|(x, _)| x.abs() >= 0.1 * peak)
            .map(|(x, name)| (*x / peak, name.as_str()))
            .collect();
        if terms.len() == 1 {
            return terms[0].1.to_string();
        }
        terms
            .iter()
            .map(|(x, name)| format!("{x:+.2}*{name}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub gradient_tol: f64,
    pub step_tol: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tol: 1e-8,
            step_tol: 1e-12,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub parameters: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Weighted residual sum of squares.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after each accepted step, starting with the initial guess.
    pub cost_history: Vec<f64>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.parameters[i])
    }
}

fn gradient_converged(jac: &DMatrix<f64>, r: &DVector<f64>, cost: f64, tol: f64) -> bool {
    let g = jac.transpose() * r;
    g.amax() <= tol * (1.0 + cost)
}

pub fn levenberg_marquardt(problem: &FitProblem<'_>, options: &LmOptions) -> Result<FitResult> {
    let n = problem.names.len();
    let scales = &problem.scales;
    let mut p = problem.initial.clone();
    let mut r = problem.residuals(&p)?;
    let mut cost = r.norm_squared();
    let mut jac = problem.jacobian(&p, &r)?;
    problem.check_rank(&jac)?;
    let mut lambda = options.initial_damping;
    let mut history = vec![cost];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        if gradient_converged(&jac, &r, cost, options.gradient_tol) {
            converged = true;
            break;
        }
        iterations += 1;
        let normal = jac.transpose() * &jac;
        let gradient = jac.transpose() * &r;
        let diag_floor = 1e-12 * normal.diagonal().max();
        let u_norm: f64 = p.iter().zip(scales).map(|(v, s)| (v / s).powi(2)).sum::<f64>().sqrt();
        let mut accepted = false;
        loop {
            let mut damped = normal.clone();
            for j in 0..n {
                damped[(j, j)] += lambda * normal[(j, j)].max(diag_floor);
            }
            let Some(delta) = damped.lu().solve(&(-&gradient)) else {
                lambda *= 10.0;
                if lambda > 1e30 {
                    break;
                }
                continue;
            };
            let trial = problem.clamp((0..n).map(|j| p[j] + scales[j] * delta[j]).collect());
            let step: f64 = (0..n).map(|j| ((trial[j] - p[j]) / scales[j]).powi(2)).sum::<f64>().sqrt();
            if step <= options.step_tol * (1.0 + u_norm) {
                converged = true;
                break;
            }
            let trial_r = problem.residuals(&trial)?;
            let trial_cost = trial_r.norm_squared();
            if trial_cost < cost {
                p = trial;
                r = trial_r;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                break;
            }
            lambda *= 10.0;
            if lambda > 1e30 {
                break;
            }
        }
        if accepted {
            history.push(cost);
            jac = problem.jacobian(&p, &r)?;
        }
        if converged || !accepted {
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence { iterations });
    }
    problem.check_rank(&jac)?;
    // one undamped Gauss-Newton step, kept only if it does not raise the cost
    let gradient = jac.transpose() * &r;
    if let Some(delta) = (jac.transpose() * &jac).lu().solve(&(-gradient)) {
        let trial = problem.clamp((0..n).map(|j| p[j] + scales[j] * delta[j]).collect());
        if let Ok(trial_r) = problem.residuals(&trial) {
            let trial_cost = trial_r.norm_squared();
            if trial_cost <= cost {
                p = trial;
                cost = trial_cost;
                history.push(cost);
                jac = problem.jacobian(&p, &trial_r)?;
            }
        }
    }
    let normal = jac.transpose() * &jac;
    let inverse = normal
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient {
            combination: problem.names.join(", "),
        })?;
    let dof = problem.data.len().saturating_sub(n);
    let variance = if problem.weighted {
        1.0
    } else if dof > 0 {
        cost / dof as f64
    } else {
        f64::NAN
    };
    let standard_errors = (0..n).map(|j| scales[j] * (inverse[(j, j)] * variance).sqrt()).collect();
    Ok(FitResult {
        names: problem.names.clone(),
        parameters: p,
        standard_errors,
        cost,
        iterations,
        converged,
        cost_history: history,
    })
}

/// How the time column of a data set is to be read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeConvention {
    True,
    Effective,
}

impl std::str::FromStr for TimeConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true" => Ok(Self::True),
            "effective" => Ok(Self::Effective),
            other => validation(format!("unknown time convention '{other}' (expected true|effective)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    /// Seconds.
    pub time: f64,
    pub p_g: f64,
    pub sigma: Option<f64>,
}

/// Measured ground-state probabilities tagged with their time convention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSeries {
    points: Vec<SeriesPoint>,
    convention: TimeConvention,
}

impl ExperimentSeries {
    pub fn new(points: Vec<SeriesPoint>, convention: TimeConvention) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.time >= 0.0 && p.time.is_finite()) {
                return validation(format!("point {i}: time must be non-negative"));
            }
            if !(0.0..=1.0).contains(&p.p_g) {
                return validation(format!("point {i}: p_g = {} outside [0, 1]", p.p_g));
            }
            if let Some(s) = p.sigma {
                if !(s >= 0.0 && s.is_finite()) {
                    return validation(format!("point {i}: sigma must be non-negative"));
                }
            }
            if i > 0 && p.time <= points[i - 1].time {
                return validation(format!("point {i}: times must be strictly increasing"));
            }
        }
        Ok(Self { points, convention })
    }

    pub fn points(&self) -> &[SeriesPoint] {
        &self.points
    }

    pub fn convention(&self) -> TimeConvention {
        self.convention
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Fit weights: the supplied sigmas when every point has a positive one.
    fn data(&self, to_true: impl Fn(f64) -> f64) -> (Vec<DataPoint>, bool) {
        let weighted = self.points.iter().all(|p| p.sigma.is_some_and(|s| s > 0.0));
        let data = self
            .points
            .iter()
            .map(|p| DataPoint {
                t: to_true(p.time),
                y: p.p_g,
                sigma: if weighted { p.sigma.unwrap_or(1.0) } else { 1.0 },
            })
            .collect();
        (data, weighted)
    }
}

/// `Q = 2ω₀·f/(γ(2ε+1))` with `f = 1` in true time and `f = √π·w/d` in
/// effective time.
pub fn q_from_rate(gamma: f64, eps: f64, omega0: f64, convention: TimeConvention, geom: &CavityGeometry) -> f64 {
    2.0 * omega0 * convention_factor(convention, geom) / (gamma * (2.0 * eps + 1.0))
}

/// Inverse of [`q_from_rate`].
pub fn rate_from_q(q: f64, eps: f64, omega0: f64, convention: TimeConvention, geom: &CavityGeometry) -> f64 {
    2.0 * omega0 * convention_factor(convention, geom) / (q * (2.0 * eps + 1.0))
}

fn convention_factor(convention: TimeConvention, geom: &CavityGeometry) -> f64 {
    match convention {
        TimeConvention::True => 1.0,
        TimeConvention::Effective => geom.effective_factor(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QFit {
    pub q: f64,
    pub q_error: f64,
    pub fit: FitResult,
}

/// Fits `Ω̄∞ + ω₀/(2ε+1)·e^{−ω₀t/Q}` to samples `(t, Ω̄)`; times are taken
/// as given, in whichever convention `convention` names.
pub fn fit_q(samples: &[(f64, f64)], eps: f64, omega0: f64, convention: TimeConvention) -> Result<QFit> {
    let _ = convention;
    if samples.len() < 2 {
        return validation("need at least two energy samples");
    }
    let asymptote = omega0 / 2.0 * (2.0 * eps - 1.0) / (2.0 * eps + 1.0);
    let amplitude = omega0 / (2.0 * eps + 1.0);
    let (t0, y0) = samples[0];
    let (t1, y1) = samples[samples.len() - 1];
    let (a0, a1) = (y0 - asymptote, y1 - asymptote);
    if !(a0 > 0.0 && a1 > 0.0 && a1 < a0 && t1 > t0) {
        return validation("energy samples do not decay towards the asymptote");
    }
    let k0 = (a0 / a1).ln() / (t1 - t0);
    let data = samples
        .iter()
        .map(|&(t, y)| DataPoint {
            t,
            y: y / omega0,
            sigma: 1.0,
        })
        .collect();
    let model = move |p: &[f64], t: f64| Ok((asymptote + amplitude * (-p[0] * t).exp()) / omega0);
    let problem = FitProblem::new(model, data, vec!["rate".into()], vec![k0], false)?
        .with_bounds(vec![0.0], vec![f64::INFINITY])?;
    let fit = levenberg_marquardt(&problem, &LmOptions::default())?;
    let k = fit.parameters[0];
    let q = omega0 / k;
    let q_error = q * fit.standard_errors[0] / k;
    Ok(QFit { q, q_error, fit })
}

/// Parameters that `fit_rabi` may vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeParam {
    Gamma1,
    Gamma2,
    Gamma3,
    DeltaT,
}

/// Fixed model configuration and starting values for a Rabi fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RabiModel {
    pub params: PhysicalParams,
    pub eps: f64,
    pub profile: Profile,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub delta_t: f64,
}

impl RabiModel {
    /// `p_g` at true time `t`, through the convolved form when `Δt > 0`.
    pub fn ground_probability(&self, t: f64) -> Result<f64> {
        let rates = SimplifiedRates::new(self.gamma1, self.gamma2, self.gamma3, self.eps)?;
        if self.delta_t > 0.0 {
            convolve_pg(&rates, &self.params, &self.profile, self.delta_t, t)
        } else {
            opencavity_pg(&rates, &self.params, t, &self.profile)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RabiFitSpec {
    pub free: Vec<FreeParam>,
    /// Vary γ₁ and γ₂ together as one parameter.
    pub tie_gamma12: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Slot {
    Gamma12,
    Single(FreeParam),
}

fn param_name(slot: Slot) -> &'static str {
    match slot {
        Slot::Gamma12 => "gamma1=gamma2",
        Slot::Single(FreeParam::Gamma1) => "gamma1",
        Slot::Single(FreeParam::Gamma2) => "gamma2",
        Slot::Single(FreeParam::Gamma3) => "gamma3",
        Slot::Single(FreeParam::DeltaT) => "delta_t",
    }
}

fn apply(model: &RabiModel, slots: &[Slot], p: &[f64]) -> RabiModel {
    let mut m = *model;
    for (slot, &v) in slots.iter().zip(p) {
        match slot {
            Slot::Gamma12 => {
                m.gamma1 = v;
                m.gamma2 = v;
            }
            Slot::Single(FreeParam::Gamma1) => m.gamma1 = v,
            Slot::Single(FreeParam::Gamma2) => m.gamma2 = v,
            Slot::Single(FreeParam::Gamma3) => m.gamma3 = v,
            Slot::Single(FreeParam::DeltaT) => m.delta_t = v,
        }
    }
    m
}

/// Least-squares fit of the open-cavity ground-state probability to a data
/// series. Effective-time series are mapped to true time first.
pub fn fit_rabi(series: &ExperimentSeries, model: &RabiModel, spec: &RabiFitSpec, options: &LmOptions) -> Result<FitResult> {
    if series.is_empty() {
        return validation("data series is empty");
    }
    let mut slots = Vec::new();
    for &free in &spec.free {
        let slot = match free {
            FreeParam::Gamma1 | FreeParam::Gamma2 if spec.tie_gamma12 => Slot::Gamma12,
            other => Slot::Single(other),
        };
        if !slots.contains(&slot) {
            slots.push(slot);
        }
    }
    if slots.is_empty() {
        return validation("no free parameters selected");
    }
    if spec.tie_gamma12 && model.gamma1 != model.gamma2 {
        return validation("tied rates need equal starting values for gamma1 and gamma2");
    }
    let to_true: Box<dyn Fn(f64) -> f64> = match (series.convention(), model.profile) {
        (TimeConvention::True, _) => Box::new(|t| t),
        (TimeConvention::Effective, Profile::Gaussian { geometry }) => Box::new(move |t| true_time(t, &geometry)),
        (TimeConvention::Effective, Profile::Constant) => {
            return validation("effective-time data need a Gaussian profile with a geometry")
        }
    };
    let (data, weighted) = series.data(to_true);
    let first = data[0].y;
    if data.iter().all(|d| d.y == first) {
        return Err(Error::RankDeficient {
            combination: format!("{} (data are constant)", slots.iter().map(|s| param_name(*s)).collect::<Vec<_>>().join(", ")),
        });
    }
    let initial: Vec<f64> = slots
        .iter()
        .map(|slot| match slot {
            Slot::Gamma12 | Slot::Single(FreeParam::Gamma1) => model.gamma1,
            Slot::Single(FreeParam::Gamma2) => model.gamma2,
            Slot::Single(FreeParam::Gamma3) => model.gamma3,
            Slot::Single(FreeParam::DeltaT) => model.delta_t,
        })
        .collect();
    let scales: Vec<f64> = slots
        .iter()
        .zip(&initial)
        .map(|(slot, &v)| match slot {
            _ if v > 0.0 => v,
            Slot::Single(FreeParam::DeltaT) => 1e-6,
            _ => 1.0,
        })
        .collect();
    let names = slots.iter().map(|s| param_name(*s).to_string()).collect();
    let base = *model;
    let eval_slots = slots.clone();
    let f = move |p: &[f64], t: f64| apply(&base, &eval_slots, p).ground_probability(t);
    let n = slots.len();
    let problem = FitProblem::new(f, data, names, initial, weighted)?
        .with_bounds(vec![0.0; n], vec![f64::INFINITY; n])?
        .with_scales(scales)?;
    levenberg_marquardt(&problem, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::energy_mean;
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
    fn exact_data_recover_parameters() {
        let truth = [2.5, 0.7, -1.3];
        let model = |p: &[f64], t: f64| Ok(p[0] * (-p[1] * t).exp() + p[2]);
        let data = (0..40)
            .map(|k| {
                let t = k as f64 * 0.1;
                DataPoint {
                    t,
                    y: model(&truth, t).unwrap(),
                    sigma: 1.0,
                }
            })
            .collect();
        let problem = FitProblem::new(model, data, vec!["a".into(), "k".into(), "c".into()], vec![1.0, 0.3, 0.0], false).unwrap();
        let fit = levenberg_marquardt(&problem, &LmOptions::default()).unwrap();
        for (got, want) in fit.parameters.iter().zip(truth) {
            assert!((got - want).abs() <= 1e-8 * want.abs());
        }
        assert!(fit.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn affine_model_matches_normal_equations() {
        let pts: Vec<(f64, f64)> = (0..25).map(|k| {
            let t = k as f64 * 0.37;
            (t, 1.7 * t - 0.4 + 0.01 * (3.1 * t).sin())
        }).collect();
        let n = pts.len() as f64;
        let (st, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (stt, sty) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 * p.0, a.1 + p.0 * p.1));
        let slope = (n * sty - st * sy) / (n * stt - st * st);
        let intercept = (sy - slope * st) / n;
        let data = pts.iter().map(|&(t, y)| DataPoint { t, y, sigma: 1.0 }).collect();
        let problem = FitProblem::new(|p: &[f64], t: f64| Ok(p[0] * t + p[1]), data, vec!["a".into(), "b".into()], vec![1.0, 1.0], false).unwrap();
        let fit = levenberg_marquardt(&problem, &LmOptions::default()).unwrap();
        assert!((fit.parameters[0] - slope).abs() < 1e-10);
        assert!((fit.parameters[1] - intercept).abs() < 1e-10);
    }

    #[test]
    fn flat_direction_is_named() {
        let data: Vec<DataPoint> = (0..10).map(|k| DataPoint { t: k as f64, y: k as f64, sigma: 1.0 }).collect();
        let problem = FitProblem::new(|p: &[f64], t: f64| Ok((p[0] + p[1]) * t), data.clone(), vec!["a".into(), "b".into()], vec![0.3, 0.2], false).unwrap();
        match levenberg_marquardt(&problem, &LmOptions::default()) {
            Err(Error::RankDeficient { combination }) => {
                assert!(combination.contains('a') && combination.contains('b'), "{combination}")
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        let problem = FitProblem::new(|p: &[f64], t: f64| Ok(p[0] * t), data, vec!["a".into(), "unused".into()], vec![0.3, 0.2], false).unwrap();
        match levenberg_marquardt(&problem, &LmOptions::default()) {
            Err(Error::RankDeficient { combination }) => assert_eq!(combination, "unused"),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn problem_validation() {
        let model = |p: &[f64], _t: f64| Ok(p[0]);
        assert!(FitProblem::new(model, vec![], vec!["a".into()], vec![1.0], false).is_err());
        let bad = vec![DataPoint { t: 0.0, y: 1.0, sigma: 0.0 }];
        assert!(FitProblem::new(model, bad, vec!["a".into()], vec![1.0], true).is_err());
        assert!(FitProblem::new(model, vec![DataPoint { t: 0.0, y: 1.0, sigma: 1.0 }], vec![], vec![], false).is_err());
    }

    #[test]
    fn q_from_energy_curve() {
        let p = params();
        let eps = 0.0466;
        let rates = SimplifiedRates::new(17.73, 17.73, 0.07 * G, eps).unwrap();
        let samples: Vec<(f64, f64)> = (0..=430)
            .map(|k| {
                let t = k as f64 * 1e-3;
                (t, energy_mean(&rates, &p, t).unwrap())
            })
            .collect();
        let fit = fit_q(&samples, eps, p.omega0(), TimeConvention::True).unwrap();
        let identity = q_from_rate(17.73, eps, p.omega0(), TimeConvention::True, &geometry());
        assert!((fit.q / identity - 1.0).abs() < 1e-6);
        assert!((fit.q / 3.31e10 - 1.0).abs() < 0.01);
    }

    #[test]
    fn q_identities() {
        let p = params();
        let geom = geometry();
        let gamma = rate_from_q(7e7, 0.0466, p.omega0(), TimeConvention::Effective, &geom);
        assert!((gamma - 1772.8).abs() < 1.0);
        assert!((q_from_rate(100.0, 0.0, p.omega0(), TimeConvention::True, &geom) - 2.0 * p.omega0() / 100.0).abs() < 1e-3);
        let round = q_from_rate(gamma, 0.0466, p.omega0(), TimeConvention::Effective, &geom);
        assert!((round / 7e7 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn q_fit_rejects_growth() {
        let samples = vec![(0.0, -1.0), (1.0, 0.0)];
        assert!(fit_q(&samples, 0.0, 10.0, TimeConvention::True).is_err());
    }

    #[test]
    fn energy_objective_is_flat_in_gamma3() {
        let p = params();
        let eps = 0.0466;
        let samples: Vec<(f64, f64)> = (0..=43).map(|k| {
            let t = k as f64 * 1e-2;
            let r = SimplifiedRates::new(17.73, 17.73, 0.07 * G, eps).unwrap();
            (t, energy_mean(&r, &p, t).unwrap())
        }).collect();
        let data = samples.iter().map(|&(t, y)| DataPoint { t, y: y / p.omega0(), sigma: 1.0 }).collect();
        let model = move |q: &[f64], t: f64| {
            let r = SimplifiedRates::new(q[0], q[0], q[1], eps)?;
            Ok(energy_mean(&r, &p, t)? / p.omega0())
        };
        let problem = FitProblem::new(model, data, vec!["gamma1=gamma2".into(), "gamma3".into()], vec![15.0, 0.05 * G], false).unwrap();
        match levenberg_marquardt(&problem, &LmOptions::default()) {
            Err(Error::RankDeficient { combination }) => assert_eq!(combination, "gamma3"),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    fn synthetic(model: &RabiModel, convention: TimeConvention) -> ExperimentSeries {
        let f = model.profile;
        let points = (0..=430)
            .map(|k| {
                let t = k as f64 * 1e-6;
                let p_g = model.ground_probability(t).unwrap();
                let time = match (convention, f) {
                    (TimeConvention::Effective, Profile::Gaussian { geometry }) => t * geometry.effective_factor(),
                    _ => t,
                };
                SeriesPoint { time, p_g, sigma: Some(0.01) }
            })
            .collect();
        ExperimentSeries::new(points, convention).unwrap()
    }

    fn truth() -> RabiModel {
        let p = params();
        RabiModel {
            params: p,
            eps: p.epsilon(),
            profile: Profile::Gaussian { geometry: geometry() },
            gamma1: 17.73,
            gamma2: 17.73,
            gamma3: 0.07 * G,
            delta_t: 0.0,
        }
    }

    #[test]
    fn rabi_roundtrip_rates() {
        let series = synthetic(&truth(), TimeConvention::True);
        let start = RabiModel { gamma1: 25.0, gamma2: 25.0, gamma3: 0.05 * G, ..truth() };
        let spec = RabiFitSpec { free: vec![FreeParam::Gamma1, FreeParam::Gamma3], tie_gamma12: true };
        let fit = fit_rabi(&series, &start, &spec, &LmOptions::default()).unwrap();
        assert!((fit.get("gamma1=gamma2").unwrap() / 17.73 - 1.0).abs() < 1e-3);
        assert!((fit.get("gamma3").unwrap() / (0.07 * G) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn rabi_roundtrip_delta_t() {
        let model = RabiModel { gamma3: 0.0, delta_t: 2.37e-6, ..truth() };
        let series = synthetic(&model, TimeConvention::True);
        let start = RabiModel { delta_t: 1.5e-6, ..model };
        let spec = RabiFitSpec { free: vec![FreeParam::DeltaT], tie_gamma12: false };
        let fit = fit_rabi(&series, &start, &spec, &LmOptions::default()).unwrap();
        assert!((fit.get("delta_t").unwrap() / 2.37e-6 - 1.0).abs() < 0.01);
    }

    #[test]
    fn conventions_give_same_rates() {
        let start = RabiModel { gamma1: 25.0, gamma2: 25.0, gamma3: 0.05 * G, ..truth() };
        let spec = RabiFitSpec { free: vec![FreeParam::Gamma1, FreeParam::Gamma3], tie_gamma12: true };
        let a = fit_rabi(&synthetic(&truth(), TimeConvention::True), &start, &spec, &LmOptions::default()).unwrap();
        let b = fit_rabi(&synthetic(&truth(), TimeConvention::Effective), &start, &spec, &LmOptions::default()).unwrap();
        for (x, y) in a.parameters.iter().zip(&b.parameters) {
            assert!((x / y - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_rabi_requests() {
        let series = synthetic(&truth(), TimeConvention::True);
        let none = RabiFitSpec { free: vec![], tie_gamma12: false };
        assert!(matches!(fit_rabi(&series, &truth(), &none, &LmOptions::default()), Err(Error::Validation(_))));
        let flat = ExperimentSeries::new(
            (0..20).map(|k| SeriesPoint { time: k as f64 * 1e-6, p_g: 0.5, sigma: None }).collect(),
            TimeConvention::True,
        )
        .unwrap();
        let spec = RabiFitSpec { free: vec![FreeParam::Gamma3], tie_gamma12: false };
        assert!(matches!(fit_rabi(&flat, &truth(), &spec, &LmOptions::default()), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn series_validation() {
        let pt = |time, p_g| SeriesPoint { time, p_g, sigma: None };
        assert!(ExperimentSeries::new(vec![pt(0.0, 0.1), pt(0.0, 0.2)], TimeConvention::True).is_err());
        assert!(ExperimentSeries::new(vec![pt(0.0, 1.2)], TimeConvention::True).is_err());
        assert!("effective".parse::<TimeConvention>().unwrap() == TimeConvention::Effective);
        assert!("sideways".parse::<TimeConvention>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn single_exponential_q_roundtrip(log_q in 7.0f64..11.0, eps in 0.0f64..0.1) {
            let omega0 = 2.0 * PI * 51.099e9;
            let q = 10f64.powf(log_q);
            let asymptote = omega0 / 2.0 * (2.0 * eps - 1.0) / (2.0 * eps + 1.0);
            let k = omega0 / q;
            let samples: Vec<(f64, f64)> = (0..=100)
                .map(|i| {
                    let t = i as f64 * 0.03 / k;
                    (t, asymptote + omega0 / (2.0 * eps + 1.0) * (-k * t).exp())
                })
                .collect();
            let fit = fit_q(&samples, eps, omega0, TimeConvention::True).unwrap();
            prop_assert!((fit.q / q - 1.0).abs() < 1e-6);
            prop_assert!(fit.fit.cost_history.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
