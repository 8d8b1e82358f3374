//! The planar Coulomb potential `g(x) = −(1/2π) ln|x|`, its truncation at a
//! radius η, uniform circle measures ("smeared Dirac masses"), and the field
//! `∇H_{N,η} = ∇g ∗ (Σ_i δ_{x_i}^{(η_i)} − N μ)`.

use crate::error::{Error, Result};
use crate::euler_pde::VorticityGrid;
use crate::geometry::{Mat2, Vec2};
use crate::numerics::quadrature::integrate_adaptive;
use crate::vortex_sde::VortexEnsemble;
use rayon::prelude::*;
use std::f64::consts::PI;

pub const TWO_PI: f64 = 2.0 * PI;

/// Default number of circle nodes for [`smeared_delta`].
pub const DEFAULT_CIRCLE_NODES: usize = 256;

pub fn g(x: Vec2) -> Result<f64> {
    let r = x.norm();
    if r == 0.0 {
        return Err(Error::Singular("g evaluated at the origin".into()));
    }
    Ok(-r.ln() / TWO_PI)
}

/// `g̃(η) = −(1/2π) ln η`, the value of `g` on the circle of radius η.
#[inline]
pub fn g_tilde(eta: f64) -> f64 {
    -eta.ln() / TWO_PI
}

/// `g` capped at `g̃(η)` inside the disc of radius η. The seam `|x| = η` takes the outer branch.
pub fn g_trunc(x: Vec2, eta: f64) -> Result<f64> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidArgument(format!("truncation radius must be positive, got {eta}")));
    }
    let r = x.norm();
    Ok(if r >= eta { -r.ln() / TWO_PI } else { g_tilde(eta) })
}

/// `∇g_η(x) = −x/(2π|x|²)·1_{|x| ≥ η}`; `eta = 0` gives the untruncated gradient.
pub fn grad_g_trunc(x: Vec2, eta: f64) -> Result<Vec2> {
    if eta < 0.0 || !eta.is_finite() {
        return Err(Error::InvalidArgument(format!("truncation radius must be nonnegative, got {eta}")));
    }
    let r2 = x.norm_squared();
    if eta == 0.0 && r2 == 0.0 {
        return Err(Error::Singular("∇g evaluated at the origin".into()));
    }
    Ok(if r2 >= eta * eta { -x / (TWO_PI * r2) } else { Vec2::zeros() })
}

/// Untruncated `∇g(x)`; callers guarantee `x ≠ 0`.
#[inline]
pub fn grad_g(x: Vec2) -> Vec2 {
    -x / (TWO_PI * x.norm_squared())
}

/// `∇⊥g(x) = (−∂₂g, ∂₁g)(x)`; callers guarantee `x ≠ 0`.
#[inline]
pub fn grad_perp_g(x: Vec2) -> Vec2 {
    let s = 1.0 / (TWO_PI * x.norm_squared());
    Vec2::new(x.y * s, -x.x * s)
}

pub fn hess_g(x: Vec2) -> Result<Mat2> {
    let r2 = x.norm_squared();
    if r2 == 0.0 {
        return Err(Error::Singular("∇²g evaluated at the origin".into()));
    }
    Ok(hess_g_unchecked(x))
}

#[inline]
pub fn hess_g_unchecked(x: Vec2) -> Mat2 {
    let r2 = x.norm_squared();
    let r4 = r2 * r2;
    let c = -1.0 / TWO_PI;
    Mat2::new(
        c * (1.0 / r2 - 2.0 * x.x * x.x / r4),
        c * (-2.0 * x.x * x.y / r4),
        c * (-2.0 * x.x * x.y / r4),
        c * (1.0 / r2 - 2.0 * x.y * x.y / r4),
    )
}

/// Potential at distance `r` of the uniform unit-mass disc of radius `rho`.
///
/// This is the grid-quadrature kernel: each cell is replaced by the disc of
/// equal area, which agrees with `g` outside `rho` and is finite inside.
#[inline]
pub fn g_disc(r: f64, rho: f64) -> f64 {
    if r >= rho {
        -r.ln() / TWO_PI
    } else {
        g_tilde(rho) + (rho * rho - r * r) / (4.0 * PI * rho * rho)
    }
}

/// Gradient of [`g_disc`] as a function of the offset vector.
#[inline]
pub fn grad_g_disc(x: Vec2, rho: f64) -> Vec2 {
    let r2 = x.norm_squared().max(rho * rho);
    -x / (TWO_PI * r2)
}

/// Equal-area disc radius of a square cell of side `h`.
#[inline]
pub fn cell_disc_radius(h: f64) -> f64 {
    h / PI.sqrt()
}

/// Per-vortex truncation radii.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationVector(Vec<f64>);

impl TruncationVector {
    pub fn new(etas: Vec<f64>) -> Result<Self> {
        if let Some(bad) = etas.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
            return Err(Error::InvalidArgument(format!("truncation radius {bad} is not positive")));
        }
        Ok(Self(etas))
    }

    pub fn uniform(n: usize, eta: f64) -> Result<Self> {
        Self::new(vec![eta; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().cloned().fold(0.0, f64::max)
    }
}

/// Uniform `M`-node trapezoid discretization of the normalized arc measure on `∂B(center, η)`.
#[derive(Debug, Clone)]
pub struct SmearedDelta {
    pub center: Vec2,
    pub radius: f64,
    pub nodes: Vec<Vec2>,
    pub weights: Vec<f64>,
}

pub fn smeared_delta(center: Vec2, eta: f64, m: usize) -> Result<SmearedDelta> {
    if m < 8 {
        return Err(Error::InvalidArgument(format!("circle quadrature needs at least 8 nodes, got {m}")));
    }
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("smearing radius must be positive, got {eta}")));
    }
    let nodes = (0..m)
        .map(|k| {
            let th = TWO_PI * k as f64 / m as f64;
            center + eta * Vec2::new(th.cos(), th.sin())
        })
        .collect();
    Ok(SmearedDelta { center, radius: eta, nodes, weights: vec![1.0 / m as f64; m] })
}

impl SmearedDelta {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// `(g ∗ δ^{(η)})(x)` by the circle rule.
    pub fn potential(&self, x: Vec2) -> Result<f64> {
        self.nodes.iter().zip(&self.weights).map(|(p, w)| g(x - p).map(|v| w * v)).sum()
    }
}

/// `(1/2π)∫₀^{2π} (ln a − ln|d + b e^{iθ}|)₊ dθ`.
fn mean_log_deficit(a: f64, b: f64, d: f64) -> f64 {
    // |z|² = d² + b² + 2db cos θ < a²  ⇔  cos θ < c
    let c = (a * a - d * d - b * b) / (2.0 * d * b);
    if c <= -1.0 || d == 0.0 && b >= a {
        return 0.0;
    }
    if c >= 1.0 || d == 0.0 {
        return a.ln() - (d * d + b * b).sqrt().ln();
    }
    let theta_star = c.acos();
    let integrand = |th: f64| {
        let z2 = (d * d + b * b + 2.0 * d * b * th.cos()).max(0.0);
        if z2 == 0.0 {
            0.0
        } else {
            a.ln() - 0.5 * z2.ln()
        }
    };
    integrate_adaptive(integrand, theta_star, PI, 1e-14) / PI
}

/// Mean of `ln|z|` over the circle of radius `b` about a point at distance `d` from 0.
#[inline]
fn mean_log_on_circle(b: f64, d: f64) -> f64 {
    d.max(b).ln()
}

/// `∬ g d σ_{∂B(0,a)} d σ_{∂B(p,b)}` with `|p| = d`: the interaction of two
/// uniform circle measures. Symmetric in `(a, b)`.
pub fn circle_circle_interaction(a: f64, b: f64, d: f64) -> f64 {
    if d >= a + b {
        return -d.ln() / TWO_PI;
    }
    if d + b <= a {
        return g_tilde(a);
    }
    if d + a <= b {
        return g_tilde(b);
    }
    -(mean_log_on_circle(b, d) + mean_log_deficit(a, b, d)) / TWO_PI
}

/// Mean of [`g_disc`]`(·, rho)` over the circle of radius `eta` centred at distance `r`:
/// the smeared-vortex analogue of the cell kernel.
pub fn circle_disc_mean(r: f64, eta: f64, rho: f64) -> f64 {
    if r >= rho + eta {
        return -r.ln() / TWO_PI;
    }
    if r + eta <= rho {
        return g_tilde(rho) + (rho * rho - r * r - eta * eta) / (4.0 * PI * rho * rho);
    }
    let log_part = -(mean_log_on_circle(eta, r) + mean_log_deficit(rho, eta, r)) / TWO_PI;
    // quadratic cap (ρ² − s²)/(4πρ²) on the arc where s < ρ
    let c = if r == 0.0 { -2.0 } else { (rho * rho - r * r - eta * eta) / (2.0 * r * eta) };
    let cap = if c <= -1.0 {
        0.0
    } else if c >= 1.0 {
        (rho * rho - r * r - eta * eta) / (4.0 * PI * rho * rho)
    } else {
        let ts = c.acos();
        ((rho * rho - r * r - eta * eta) * (TWO_PI - 2.0 * ts) + 4.0 * r * eta * ts.sin())
            / (TWO_PI * 4.0 * PI * rho * rho)
    };
    log_part + cap
}

/// Result of [`field_grad_h`]: values plus indices of points flagged as too
/// close to a smearing circle.
#[derive(Debug, Clone)]
pub struct FieldEvaluation {
    pub values: Vec<Vec2>,
    pub flagged: Vec<usize>,
}

/// `∇H_{N,η}(p) = Σ_i ∇g_{η_i}(p − x_i) − N ∇(g ∗ μ)(p)` at each point.
///
/// The μ-term uses the cell rule with each cell replaced by its equal-area
/// disc, which is exact outside the disc and regular inside.
pub fn field_grad_h(
    ensemble: &VortexEnsemble,
    etas: &TruncationVector,
    mu: &VorticityGrid,
    points: &[Vec2],
) -> Result<FieldEvaluation> {
    if etas.len() != ensemble.len() {
        return Err(Error::InvalidArgument("one truncation radius per vortex required".into()));
    }
    let h = mu.h();
    let rho = cell_disc_radius(h);
    let area = h * h;
    let n_f = ensemble.len() as f64;
    let cells: Vec<(Vec2, f64)> = mu
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(idx, v)| (mu.node(idx), v * area))
        .collect();
    let results: Vec<(Vec2, bool)> = points
        .par_iter()
        .map(|&p| {
            let mut flagged = false;
            let mut acc = Vec2::zeros();
            for (x, &eta) in ensemble.positions().iter().zip(etas.as_slice()) {
                let off = p - x;
                let r = off.norm();
                if (r - eta).abs() <= h {
                    flagged = true;
                }
                if r >= eta {
                    acc += grad_g(off);
                }
            }
            for (y, w) in &cells {
                acc -= n_f * w * grad_g_disc(p - y, rho);
            }
            (acc, flagged)
        })
        .collect();
    let flagged = results.iter().enumerate().filter(|(_, r)| r.1).map(|(i, _)| i).collect();
    Ok(FieldEvaluation { values: results.into_iter().map(|r| r.0).collect(), flagged })
}
