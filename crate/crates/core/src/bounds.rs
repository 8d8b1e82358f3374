//! Osgood modulus `ρ(r) = r ln(1/r)`, the mean-field envelope, the ε-schedule
//! and the closure of the maximal-function inequality
//!
//! `𝔊(t) ≤ 𝔊(0) + A ∫₀ᵗ |ln 𝔊| 𝔊 ds + B t`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::E;

const INV_E: f64 = 1.0 / E;

/// `𝔐(x) = ln ln(1/x)` on `(0, e⁻¹]`.
pub fn osgood_m(x: f64) -> Result<f64> {
    if !(x > 0.0 && x <= INV_E) {
        return Err(Error::Domain(format!("M is defined on (0, 1/e], got {x}")));
    }
    Ok((-x.ln()).ln())
}

/// `𝔐⁻¹(y) = e^{−e^y}` on `[0, ∞)`.
pub fn osgood_minv(y: f64) -> Result<f64> {
    if !(y >= 0.0) {
        return Err(Error::Domain(format!("M⁻¹ is defined on [0, ∞), got {y}")));
    }
    Ok((-y.exp()).exp())
}

/// `⟨r⟩_ε = (ε² + r²)^{1/2}`.
#[inline]
pub fn regularizer(r: f64, eps: f64) -> f64 {
    eps.hypot(r)
}

/// `ln N / N`.
pub fn default_regularization(n: u64) -> f64 {
    let n = n as f64;
    n.ln() / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
}

/// Root of `r ln(1/r) = target` on `(0, e⁻¹)`, where the left side increases.
fn solve_r_log(target: f64) -> Result<f64> {
    if !(target > 0.0 && target < INV_E) {
        return Err(Error::Domain(format!("r ln(1/r) = {target} has no root in (0, 1/e)")));
    }
    let f = |r: f64| -r * r.ln() - target;
    let (mut lo, mut hi) = (0.0f64, INV_E);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if f(lo).abs() < f(hi).abs() { lo } else { hi })
}

/// `ε₃ = min{G, e⁻¹, ‖ξ⁰‖_∞⁻¹}`, `ε₂ |ln ε₂| = ε₃²`, `ε₁ = ε₂²`.
pub fn epsilon_schedule(g: f64, n: u64, xi_inf: f64) -> Result<EpsilonSchedule> {
    if !(g > 0.0) {
        return Err(Error::InvalidArgument(format!("G must be positive, got {g}")));
    }
    if n < 3 {
        return Err(Error::InvalidArgument(format!("N must be at least 3, got {n}")));
    }
    if !(xi_inf >= 0.0) {
        return Err(Error::InvalidArgument(format!("‖ξ⁰‖_∞ must be nonnegative, got {xi_inf}")));
    }
    let inv_xi = if xi_inf > 0.0 { 1.0 / xi_inf } else { f64::INFINITY };
    if default_regularization(n) > INV_E.min(inv_xi) {
        return Err(Error::InvalidArgument(format!("N = {n} too small: ln N/N exceeds min(1/e, 1/‖ξ⁰‖_∞)")));
    }
    let eps3 = g.min(INV_E).min(inv_xi);
    let eps2 = solve_r_log(eps3 * eps3)?;
    Ok(EpsilonSchedule { eps1: eps2 * eps2, eps2, eps3 })
}

/// Which logarithm multiplies `t/N` in the additive term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LogForm {
    /// `(ln N)²`, the published envelope.
    #[default]
    LnN,
    /// `(ln(N/ln N))²`, as produced by the closure argument.
    LnNOverLnN,
}

impl LogForm {
    pub fn squared_log(self, n: u64) -> f64 {
        let n = n as f64;
        match self {
            Self::LnN => n.ln().powi(2),
            Self::LnNOverLnN => (n / n.ln()).ln().powi(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeParams {
    pub xi_inf: f64,
    pub sigma_grad: f64,
    pub c: f64,
    pub f0: f64,
    pub n: u64,
    pub t: f64,
}

impl EnvelopeParams {
    fn validate(&self) -> Result<()> {
        let fields = [self.xi_inf, self.sigma_grad, self.c, self.f0, self.t];
        if fields.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || self.n < 2 {
            return Err(Error::InvalidArgument(format!("envelope parameters out of range: {self:?}")));
        }
        Ok(())
    }

    /// `A = C(‖ξ⁰‖_∞ + ‖∇σ‖²)`.
    pub fn rate(&self) -> f64 {
        self.c * (self.xi_inf + self.sigma_grad)
    }

    /// `F0 + A t (log)²/N`.
    pub fn base(&self, form: LogForm) -> f64 {
        self.f0 + self.rate() * self.t * form.squared_log(self.n) / self.n as f64
    }
}

/// `(F0 + A t (ln N)²/N)^{e^{−A t}}` without the admissibility check.
pub fn envelope_value(params: &EnvelopeParams) -> f64 {
    params.base(LogForm::LnN).powf((-params.rate() * params.t).exp())
}

pub fn envelope(params: &EnvelopeParams) -> Result<f64> {
    params.validate()?;
    if !admissible(params) {
        return Err(Error::Inadmissible(format!("{params:?}")));
    }
    Ok(envelope_value(params))
}

/// `ln N/N ≤ min{e⁻¹, ‖ξ⁰‖_∞⁻¹}` and `A t < ln ln(base⁻¹)`.
pub fn admissible(params: &EnvelopeParams) -> bool {
    if params.validate().is_err() {
        return false;
    }
    let inv_xi = if params.xi_inf > 0.0 { 1.0 / params.xi_inf } else { f64::INFINITY };
    if default_regularization(params.n) > INV_E.min(inv_xi) {
        return false;
    }
    let base = params.base(LogForm::LnN);
    let rhs = if base == 0.0 { f64::INFINITY } else { (-base.ln()).ln() };
    params.rate() * params.t < rhs
}

/// Running supremum of sampled `Ê⟨𝔉⟩_{ln N/N}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximalSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl MaximalSeries {
    pub fn from_samples(times: Vec<f64>, samples: &[f64]) -> Result<Self> {
        if times.len() != samples.len() || times.is_empty() {
            return Err(Error::InvalidArgument("times and samples must be nonempty and aligned".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("times must increase strictly".into()));
        }
        let mut running = f64::NEG_INFINITY;
        let values = samples
            .iter()
            .map(|&s| {
                running = running.max(s);
                running
            })
            .collect();
        Ok(Self { times, values })
    }
}

/// Coefficients of the closed inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosureParams {
    pub a: f64,
    pub b: f64,
}

impl ClosureParams {
    /// `A = C(‖ξ⁰‖_∞ + ‖∇σ‖²)`, `B = A (log)²/N`.
    pub fn from_envelope(params: &EnvelopeParams, form: LogForm) -> Self {
        let a = params.rate();
        Self { a, b: a * form.squared_log(params.n) / params.n as f64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureReport {
    pub times: Vec<f64>,
    /// `𝔐⁻¹(𝔐(c_t) − ∫₀ᵗ γ)` with `c_t = 𝔊(0) + B t` and `γ ≡ A`; `e⁻¹` where the lemma does not apply.
    pub bound: Vec<f64>,
    pub applies: Vec<bool>,
    /// `𝔊(0) + A ∫₀ᵗ |ln 𝔊| 𝔊 + B t` by the trapezoid rule over the series.
    pub inequality_rhs: Vec<f64>,
}

fn trapezoid_cumulative(times: &[f64], f: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(times.len());
    out.push(0.0);
    for j in 1..times.len() {
        acc += 0.5 * (f[j] + f[j - 1]) * (times[j] - times[j - 1]);
        out.push(acc);
    }
    out
}

pub fn osgood_closure(series: &MaximalSeries, closure: &ClosureParams) -> Result<ClosureReport> {
    if let Some(j) = series.values.iter().position(|v| !(*v > 0.0 && *v < INV_E)) {
        return Err(Error::SeriesExit { t: series.times[j] });
    }
    let t0 = series.times[0];
    let g0 = series.values[0];
    let integrand: Vec<f64> = series.values.iter().map(|g| -g.ln() * g).collect();
    let osgood = trapezoid_cumulative(&series.times, &integrand);
    let gamma = trapezoid_cumulative(&series.times, &vec![closure.a; series.times.len()]);
    let mut bound = Vec::with_capacity(series.times.len());
    let mut applies = Vec::with_capacity(series.times.len());
    let mut inequality_rhs = Vec::with_capacity(series.times.len());
    for (j, &t) in series.times.iter().enumerate() {
        let c = g0 + closure.b * (t - t0);
        inequality_rhs.push(c + closure.a * osgood[j]);
        let closed = osgood_m(c).ok().and_then(|m| if gamma[j] <= m { osgood_minv(m - gamma[j]).ok() } else { None });
        applies.push(closed.is_some());
        bound.push(closed.unwrap_or(INV_E));
    }
    Ok(ClosureReport { times: series.times.clone(), bound, applies, inequality_rhs })
}

/// `max_t |𝔊(t) − (𝔊(0) + A ∫|ln 𝔊|𝔊 + B t)|` for a series proposed as a fixed point.
pub fn fixed_point_residual(series: &MaximalSeries, closure: &ClosureParams) -> Result<f64> {
    let report = osgood_closure(series, closure)?;
    Ok(series.values.iter().zip(&report.inequality_rhs).map(|(g, r)| (g - r).abs()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(f0: f64, n: u64, t: f64) -> EnvelopeParams {
        EnvelopeParams { xi_inf: 1.0, sigma_grad: 0.5, c: 1.0, f0, n, t }
    }

    #[test]
    fn osgood_pair_values() {
        assert!((osgood_m((-E).exp()).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(osgood_m(INV_E).unwrap(), 0.0);
        assert!(osgood_m(0.5).is_err());
        assert!(osgood_m(0.0).is_err());
        assert!(osgood_minv(-0.1).is_err());
        assert_eq!(osgood_minv(0.0).unwrap(), INV_E);
    }

    #[test]
    fn regularizer_floor() {
        assert_eq!(regularizer(0.0, 0.3), 0.3);
        assert!((regularizer(-4.0, 3.0) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn schedule_clamps() {
        let s = epsilon_schedule(0.9, 1000, 2.0).unwrap();
        assert_eq!(s.eps3, INV_E);
        let s = epsilon_schedule(0.9, 1000, 5.0).unwrap();
        assert_eq!(s.eps3, 0.2);
        let s = epsilon_schedule(0.01, 1000, 1.0).unwrap();
        assert_eq!(s.eps3, 0.01);
        assert_eq!(s.eps1, s.eps2 * s.eps2);
        assert!(epsilon_schedule(0.1, 2, 1.0).is_err());
        assert!(epsilon_schedule(0.1, 4, 3.0).is_err());
        assert!(epsilon_schedule(0.0, 1000, 1.0).is_err());
    }

    #[test]
    fn envelope_at_time_zero() {
        let p = params(0.05, 1000, 0.0);
        assert_eq!(envelope(&p).unwrap(), 0.05);
    }

    #[test]
    fn inadmissible_is_rejected() {
        let p = params(INV_E, 1000, 2.0);
        assert!(!admissible(&p));
        assert!(matches!(envelope(&p), Err(Error::Inadmissible(_))));
        assert!(admissible(&params(1e-9, 1_000_000, 0.1)));
    }

    #[test]
    fn no_osgood_term_is_linear() {
        let times: Vec<f64> = (0..11).map(|j| j as f64 * 0.1).collect();
        let series = MaximalSeries::from_samples(times.clone(), &[0.01; 11]).unwrap();
        let r = osgood_closure(&series, &ClosureParams { a: 0.0, b: 0.02 }).unwrap();
        for (t, b) in times.iter().zip(&r.bound) {
            assert!((b - (0.01 + 0.02 * t)).abs() < 1e-15);
        }
    }

    #[test]
    fn exit_is_reported() {
        let series = MaximalSeries::from_samples(vec![0.0, 1.0, 2.0], &[0.1, 0.2, 0.5]).unwrap();
        assert_eq!(
            osgood_closure(&series, &ClosureParams { a: 1.0, b: 0.0 }),
            Err(Error::SeriesExit { t: 2.0 })
        );
    }

    #[test]
    fn maximal_series_is_running_sup() {
        let s = MaximalSeries::from_samples(vec![0.0, 1.0, 2.0, 3.0], &[0.1, 0.05, 0.2, 0.15]).unwrap();
        assert_eq!(s.values, vec![0.1, 0.1, 0.2, 0.2]);
    }
}
