//! Pseudo-spectral solver for the stochastic Euler vorticity equation
//!
//! `∂_t ξ + u·∇ξ + Σ_k σ_k·∇ξ ∘ dW^k = 0`,  `u = ∇⊥g ∗ ξ`,
//!
//! on a periodic box `[−L, L)²`, plus the Lagrangian flow-map representation.
//! Nodes sit at `x = −L + i h` with `h = 2L/n`, stored row-major with the row
//! indexing `y`.

use crate::error::{Error, Result};
use crate::geometry::{vec2, Vec2};
use crate::noise::{BrownianPath, NoiseModel};
use crate::numerics::conv::PaddedConvolver;
use crate::numerics::fft::{signed_freq, Fft2};
use crate::numerics::interp::PeriodicLattice;
use crate::vortex_sde::VortexEnsemble;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// Negative values above `−NEGATIVE_CLIP` are treated as ringing and zeroed.
pub const NEGATIVE_CLIP: f64 = 1e-8;

/// Largest tolerated mass fraction outside the inner half of the box.
pub const SUPPORT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VorticityGrid {
    pub half_len: f64,
    pub n: usize,
    pub values: Vec<f64>,
    pub time: f64,
    /// Mass restored after every step.
    pub target_mass: f64,
}

impl VorticityGrid {
    pub fn new(half_len: f64, n: usize, values: Vec<f64>) -> Result<Self> {
        if !(half_len > 0.0) || !half_len.is_finite() {
            return Err(Error::InvalidArgument(format!("box half-length must be positive, got {half_len}")));
        }
        if n < 8 || !n.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("grid size must be even and at least 8, got {n}")));
        }
        if values.len() != n * n {
            return Err(Error::InvalidArgument(format!("expected {} values, got {}", n * n, values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("grid values must be finite".into()));
        }
        let mut grid = Self { half_len, n, values, time: 0.0, target_mass: 0.0 };
        grid.target_mass = grid.mass();
        Ok(grid)
    }

    pub fn from_fn(half_len: f64, n: usize, f: impl Fn(Vec2) -> f64 + Sync) -> Result<Self> {
        let h = 2.0 * half_len / n as f64;
        let values = (0..n * n)
            .into_par_iter()
            .map(|idx| f(vec2(-half_len + (idx % n) as f64 * h, -half_len + (idx / n) as f64 * h)))
            .collect();
        Self::new(half_len, n, values)
    }

    /// Rescales to unit mass.
    pub fn normalized(mut self) -> Result<Self> {
        let m = self.mass();
        if !(m > 0.0) {
            return Err(Error::InvalidArgument("cannot normalize a grid without positive mass".into()));
        }
        self.values.iter_mut().for_each(|v| *v /= m);
        self.target_mass = 1.0;
        Ok(self)
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_len / self.n as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.h() * self.h()
    }

    pub fn node(&self, idx: usize) -> Vec2 {
        let h = self.h();
        vec2(-self.half_len + (idx % self.n) as f64 * h, -self.half_len + (idx / self.n) as f64 * h)
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    pub fn lattice(&self) -> PeriodicLattice {
        PeriodicLattice { n: self.n, h: self.h(), origin: -self.half_len }
    }

    /// Periodic sixth-order interpolation of the stored values.
    pub fn sample(&self, p: Vec2) -> f64 {
        self.lattice().interpolate(&self.values, p)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Share of `|ξ|` mass with `max(|x|, |y|) > L/2`.
    pub fn outer_mass_fraction(&self) -> f64 {
        let inner = self.half_len / 2.0;
        let (mut outer, mut total) = (0.0, 0.0);
        for (idx, v) in self.values.iter().enumerate() {
            let a = v.abs();
            total += a;
            let p = self.node(idx);
            if p.x.abs() > inner || p.y.abs() > inner {
                outer += a;
            }
        }
        if total > 0.0 {
            outer / total
        } else {
            0.0
        }
    }

    pub fn check_support(&self) -> Result<()> {
        let fraction = self.outer_mass_fraction();
        if fraction > SUPPORT_TOLERANCE {
            return Err(Error::Support { mass_fraction: fraction });
        }
        Ok(())
    }

    /// Angular wavenumbers `π m / L` in FFT bin order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        (0..self.n).map(|m| PI * signed_freq(m, self.n) as f64 / self.half_len).collect()
    }

    /// `ξ(· − shift)` by a spectral phase shift.
    pub fn translated(&self, shift: Vec2) -> Self {
        let ops = SpectralOps::new(self.n, self.half_len);
        let mut spec = ops.forward(&self.values);
        ops.phase_shift(&mut spec, shift);
        let mut out = self.clone();
        out.values = ops.inverse_real(spec);
        out
    }

    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        self.check_same_lattice(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.cell_area())
    }

    fn check_same_lattice(&self, other: &Self) -> Result<()> {
        if self.n != other.n || self.half_len != other.half_len {
            return Err(Error::InvalidArgument("grids live on different lattices".into()));
        }
        Ok(())
    }

    /// Clips ringing negatives and rescales to the target mass.
    fn renormalize(&mut self) {
        for v in &mut self.values {
            if *v < 0.0 && *v > -NEGATIVE_CLIP {
                *v = 0.0;
            }
        }
        let m = self.mass();
        if m > 0.0 && self.target_mass > 0.0 {
            let s = self.target_mass / m;
            self.values.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Named initial vorticity profiles; every profile is normalized to unit mass on its grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialProfile {
    Gaussian {
        width: f64,
        #[serde(default)]
        center: [f64; 2],
    },
    /// Disc of radius `radius` with an error-function edge of width `edge`:
    /// `½ erfc((r − radius)/edge)`.
    SmoothedDisc {
        radius: f64,
        edge: f64,
        #[serde(default)]
        center: [f64; 2],
    },
    TwoBlob { separation: f64, width: f64 },
}

impl InitialProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Gaussian { width, .. } => width > 0.0,
            Self::SmoothedDisc { radius, edge, .. } => edge > 0.0 && radius > edge,
            Self::TwoBlob { separation, width } => width > 0.0 && separation >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid profile parameters: {self:?}")))
        }
    }

    /// Unnormalized density.
    pub fn density(&self, x: Vec2) -> f64 {
        let gauss = |c: Vec2, w: f64| (-(x - c).norm_squared() / (2.0 * w * w)).exp();
        match *self {
            Self::Gaussian { width, center } => gauss(vec2(center[0], center[1]), width),
            Self::SmoothedDisc { radius, edge, center } => {
                let r = (x - vec2(center[0], center[1])).norm();
                0.5 * libm::erfc((r - radius) / edge)
            }
            Self::TwoBlob { separation, width } => {
                let c = vec2(separation / 2.0, 0.0);
                gauss(c, width) + gauss(-c, width)
            }
        }
    }

    /// Radius around the origin outside which the density is negligible.
    pub fn extent(&self) -> f64 {
        match *self {
            Self::Gaussian { width, center } => vec2(center[0], center[1]).norm() + 6.0 * width,
            Self::SmoothedDisc { radius, edge, center } => vec2(center[0], center[1]).norm() + radius + 6.0 * edge,
            Self::TwoBlob { separation, width } => separation / 2.0 + 6.0 * width,
        }
    }

    pub fn grid(&self, half_len: f64, n: usize) -> Result<VorticityGrid> {
        self.validate()?;
        VorticityGrid::from_fn(half_len, n, |x| self.density(x))?.normalized()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Inverse CDF at `(i + U_i)/N`.
    Stratified,
    Iid,
}

/// Draws `count` vortices from the cell measure of `grid`, uniformly inside each chosen cell.
pub fn sample_ensemble<R: Rng + ?Sized>(
    grid: &VorticityGrid,
    count: usize,
    sampling: Sampling,
    rng: &mut R,
) -> Result<VortexEnsemble> {
    if count == 0 {
        return Err(Error::InvalidArgument("cannot sample an empty ensemble".into()));
    }
    let mut cdf = Vec::with_capacity(grid.values.len());
    let mut acc = 0.0;
    for v in &grid.values {
        acc += v.max(0.0);
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::InvalidArgument("grid has no positive mass to sample".into()));
    }
    let h = grid.h();
    let positions = (0..count)
        .map(|i| {
            let u: f64 = rng.gen();
            let q = match sampling {
                Sampling::Stratified => (i as f64 + u) / count as f64,
                Sampling::Iid => u,
            } * acc;
            let cell = cdf.partition_point(|&c| c <= q).min(cdf.len() - 1);
            let jitter = vec2(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * h;
            grid.node(cell) + jitter
        })
        .collect();
    VortexEnsemble::new(positions)
}

/// Velocity on the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGrid {
    pub half_len: f64,
    pub n: usize,
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
}

impl VelocityGrid {
    pub fn max_speed(&self) -> f64 {
        self.ux.iter().zip(&self.uy).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max)
    }

    pub fn sample(&self, p: Vec2) -> Vec2 {
        let lat = PeriodicLattice { n: self.n, h: 2.0 * self.half_len / self.n as f64, origin: -self.half_len };
        vec2(lat.interpolate(&self.ux, p), lat.interpolate(&self.uy, p))
    }

    /// Largest nodal value of the spectral divergence.
    pub fn max_divergence(&self) -> f64 {
        let ops = SpectralOps::new(self.n, self.half_len);
        let sx = ops.forward(&self.ux);
        let sy = ops.forward(&self.uy);
        let n = self.n;
        let spec: Vec<Complex64> = (0..n * n)
            .map(|idx| {
                let i = Complex64::i();
                i * ops.kd[idx % n] * sx[idx] + i * ops.kd[idx / n] * sy[idx]
            })
            .collect();
        ops.inverse_real(spec).iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// FFT plan, wavenumbers and the 2/3 mask for one lattice.
struct SpectralOps {
    n: usize,
    fft: Arc<Fft2>,
    /// Wavenumbers `π m / L`.
    k: Vec<f64>,
    /// Derivative wavenumbers: as `k` with the Nyquist bin zeroed.
    kd: Vec<f64>,
    keep: Vec<bool>,
}

impl SpectralOps {
    fn new(n: usize, half_len: f64) -> Self {
        let k: Vec<f64> = (0..n).map(|m| PI * signed_freq(m, n) as f64 / half_len).collect();
        let kd = (0..n).map(|m| if m == n / 2 { 0.0 } else { k[m] }).collect();
        let keep = (0..n).map(|m| signed_freq(m, n).unsigned_abs() as usize <= n / 3).collect();
        Self { n, fft: Fft2::shared(n), k, kd, keep }
    }

    fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.forward(&mut buf);
        buf
    }

    fn inverse_real(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.fft.inverse(&mut spec);
        spec.into_iter().map(|z| z.re).collect()
    }

    /// Multiplies by `e^{−ik·shift}`.
    fn phase_shift(&self, spec: &mut [Complex64], shift: Vec2) {
        let n = self.n;
        spec.par_iter_mut().enumerate().for_each(|(idx, z)| {
            let phase = -(self.k[idx % n] * shift.x + self.k[idx / n] * shift.y);
            *z *= Complex64::from_polar(1.0, phase);
        });
    }

    /// Spectra of `(u_x, u_y)` from `ξ̂`: `û = i k⊥ ξ̂ / |k|²`, zero mean mode.
    fn velocity_spectra(&self, xi: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let n = self.n;
        let i = Complex64::i();
        let (ux, uy) = xi
            .par_iter()
            .enumerate()
            .map(|(idx, &z)| {
                let (kx, ky) = (self.kd[idx % n], self.kd[idx / n]);
                let k2 = self.k[idx % n].powi(2) + self.k[idx / n].powi(2);
                if k2 == 0.0 {
                    return (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
                }
                (i * (-ky) * z / k2, i * kx * z / k2)
            })
            .unzip();
        (ux, uy)
    }

    fn velocity(&self, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let spec = self.forward(values);
        let (sx, sy) = self.velocity_spectra(&spec);
        rayon::join(|| self.inverse_real(sx), || self.inverse_real(sy))
    }

    /// `−u·∇ξ` with the product dealiased by the 2/3 rule.
    fn advection_rhs(&self, values: &[f64]) -> Vec<f64> {
        let n = self.n;
        let i = Complex64::i();
        let spec = self.forward(values);
        let (sx, sy) = self.velocity_spectra(&spec);
        let gx: Vec<Complex64> = spec.iter().enumerate().map(|(idx, z)| i * self.kd[idx % n] * z).collect();
        let gy: Vec<Complex64> = spec.iter().enumerate().map(|(idx, z)| i * self.kd[idx / n] * z).collect();
        let fields: Vec<Vec<f64>> = vec![sx, sy, gx, gy].into_par_iter().map(|s| self.inverse_real(s)).collect();
        let product: Vec<f64> = (0..n * n)
            .into_par_iter()
            .map(|c| -(fields[0][c] * fields[2][c] + fields[1][c] * fields[3][c]))
            .collect();
        let mut ps = self.forward(&product);
        ps.par_iter_mut().enumerate().for_each(|(idx, z)| {
            if !(self.keep[idx % n] && self.keep[idx / n]) {
                *z = Complex64::new(0.0, 0.0);
            }
        });
        self.inverse_real(ps)
    }

    /// SSP-RK3 for `∂_t ξ = −u(ξ)·∇ξ` over `dt`.
    fn advect(&self, values: &[f64], dt: f64) -> Vec<f64> {
        let l0 = self.advection_rhs(values);
        let s1: Vec<f64> = values.iter().zip(&l0).map(|(x, l)| x + dt * l).collect();
        let l1 = self.advection_rhs(&s1);
        let s2: Vec<f64> =
            values.iter().zip(&s1).zip(&l1).map(|((x, y), l)| 0.75 * x + 0.25 * (y + dt * l)).collect();
        let l2 = self.advection_rhs(&s2);
        values
            .iter()
            .zip(&s2)
            .zip(&l2)
            .map(|((x, y), l)| x / 3.0 + 2.0 / 3.0 * (y + dt * l))
            .collect()
    }
}

/// `u = ∇⊥g ∗ ξ` by spectral inversion with the mean velocity mode set to zero.
pub fn biot_savart(grid: &VorticityGrid) -> VelocityGrid {
    let ops = SpectralOps::new(grid.n, grid.half_len);
    let (ux, uy) = ops.velocity(&grid.values);
    VelocityGrid { half_len: grid.half_len, n: grid.n, ux, uy }
}

/// Largest step with `dt · max|u| ≤ h`.
pub fn cfl_limit(grid: &VorticityGrid) -> f64 {
    let speed = biot_savart(grid).max_speed();
    if speed > 0.0 {
        grid.h() / speed
    } else {
        f64::INFINITY
    }
}

/// One step driven by step `n` of `path`; `dt` must equal the path step.
pub fn step(
    grid: &VorticityGrid,
    noise: &NoiseModel,
    path: &BrownianPath,
    n: u64,
    dt: f64,
) -> Result<VorticityGrid> {
    if !(dt > 0.0) || (dt - path.dt()).abs() > 1e-12 * path.dt() {
        return Err(Error::InvalidArgument(format!("step {dt} does not match the path step {}", path.dt())));
    }
    step_with_increments(grid, noise, &path.increments(noise.count(), n), dt)
}

/// Strang split: advection over `dt/2`, stochastic transport by the frozen
/// displacement `Σ_k σ_k ΔW^k`, advection over `dt/2`; then clip and renormalize.
pub fn step_with_increments(
    grid: &VorticityGrid,
    noise: &NoiseModel,
    dw: &[f64],
    dt: f64,
) -> Result<VorticityGrid> {
    let ops = SpectralOps::new(grid.n, grid.half_len);
    let (ux, uy) = ops.velocity(&grid.values);
    let speed = ux.iter().zip(&uy).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);
    let bound = if speed > 0.0 { grid.h() / speed } else { f64::INFINITY };
    if dt > bound {
        return Err(Error::Cfl { dt, bound });
    }
    let mut values = ops.advect(&grid.values, dt / 2.0);
    values = transport(grid, &ops, noise, dw, values);
    values = ops.advect(&values, dt / 2.0);
    let mut next = VorticityGrid { values, time: grid.time + dt, ..grid.clone() };
    next.renormalize();
    next.check_support()?;
    Ok(next)
}

fn transport(
    grid: &VorticityGrid,
    ops: &SpectralOps,
    noise: &NoiseModel,
    dw: &[f64],
    values: Vec<f64>,
) -> Vec<f64> {
    if noise.count() == 0 || dw.iter().all(|w| *w == 0.0) {
        return values;
    }
    if noise.is_constant_only() {
        let shift = noise.displacement(Vec2::zeros(), dw);
        let mut spec = ops.forward(&values);
        ops.phase_shift(&mut spec, shift);
        return ops.inverse_real(spec);
    }
    let lattice = grid.lattice();
    (0..values.len())
        .into_par_iter()
        .map(|idx| {
            let x = grid.node(idx);
            let mid = x - 0.5 * noise.displacement(x, dw);
            lattice.interpolate(&values, x - noise.displacement(mid, dw))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lp {
    L1,
    L2,
    Inf,
}

pub fn lp_norm(grid: &VorticityGrid, p: Lp) -> f64 {
    let a = grid.cell_area();
    match p {
        Lp::L1 => grid.values.iter().map(|v| v.abs()).sum::<f64>() * a,
        Lp::L2 => (grid.values.iter().map(|v| v * v).sum::<f64>() * a).sqrt(),
        Lp::Inf => grid.values.iter().fold(0.0, |m, v| m.max(v.abs())),
    }
}

/// `(∫ ln⟨x⟩ dξ, ∬ ln⟨x − y⟩ dξ dξ)` with `⟨z⟩ = (1 + |z|²)^{1/2}`.
pub fn moment_check(grid: &VorticityGrid) -> (f64, f64) {
    let a = grid.cell_area();
    let first: f64 = grid
        .values
        .iter()
        .enumerate()
        .map(|(idx, v)| v * 0.5 * grid.node(idx).norm_squared().ln_1p())
        .sum::<f64>()
        * a;
    let conv = PaddedConvolver::new(grid.n);
    let ds = conv.spectrum(&grid.values);
    let ks = conv.kernel_spectrum(grid.h(), |x, y| 0.5 * (x * x + y * y).ln_1p());
    let pot = conv.convolve(&[(&ds, &ks)]);
    let second = grid.values.iter().zip(&pot).map(|(v, p)| v * p).sum::<f64>() * a * a;
    (first, second)
}

/// Tracers `Φ_t(y_m)` carrying `ξ⁰(y_m)` and the area each seed represents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMap {
    pub positions: Vec<Vec2>,
    pub initial_values: Vec<f64>,
    pub seed_area: f64,
    pub time: f64,
}

impl FlowMap {
    /// `per_axis²` tracers at sub-cell centers of every cell where `ξ⁰ > 0`.
    pub fn seeded(grid: &VorticityGrid, per_axis: usize) -> Result<Self> {
        if per_axis == 0 {
            return Err(Error::InvalidArgument("need at least one tracer per cell axis".into()));
        }
        let h = grid.h();
        let sub = h / per_axis as f64;
        let mut positions = Vec::new();
        let mut initial_values = Vec::new();
        for (idx, &v) in grid.values.iter().enumerate() {
            if v <= 0.0 {
                continue;
            }
            let corner = grid.node(idx) - vec2(h / 2.0, h / 2.0);
            for a in 0..per_axis {
                for b in 0..per_axis {
                    let p = corner + vec2((b as f64 + 0.5) * sub, (a as f64 + 0.5) * sub);
                    positions.push(p);
                    initial_values.push(grid.sample(p).max(0.0));
                }
            }
        }
        Ok(Self { positions, initial_values, seed_area: sub * sub, time: grid.time })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Histogram of tracer masses on the lattice of `like`, as a density.
    pub fn pushforward(&self, like: &VorticityGrid) -> VorticityGrid {
        let (n, h, l) = (like.n, like.h(), like.half_len);
        let mut values = vec![0.0; n * n];
        for (p, w) in self.positions.iter().zip(&self.initial_values) {
            let col = ((p.x + l) / h).round() as isize;
            let row = ((p.y + l) / h).round() as isize;
            let idx = row.rem_euclid(n as isize) as usize * n + col.rem_euclid(n as isize) as usize;
            values[idx] += w * self.seed_area / (h * h);
        }
        VorticityGrid { half_len: l, n, values, time: self.time, target_mass: like.target_mass }
    }
}

/// Velocity source for [`flow_step`].
#[derive(Debug, Clone, Copy)]
pub enum FlowVelocity<'a> {
    /// One-way coupling to a grid solution, frozen over the step.
    Grid(&'a VorticityGrid),
    /// The tracer cloud's own field with the kernel `z⊥/(2π(|z|² + δ²))`.
    SelfConsistent { blob: f64 },
}

/// Heun step of `dΦ = u^Φ(Φ) dt + Σ_k σ_k(Φ) ∘ dW^k` over step `n` of `path`.
pub fn flow_step(
    flow: &FlowMap,
    velocity: FlowVelocity<'_>,
    noise: &NoiseModel,
    path: &BrownianPath,
    n: u64,
    dt: f64,
) -> Result<FlowMap> {
    if !(dt > 0.0) || (dt - path.dt()).abs() > 1e-12 * path.dt() {
        return Err(Error::InvalidArgument(format!("step {dt} does not match the path step {}", path.dt())));
    }
    let dw = path.increments(noise.count(), n);
    let field: Box<dyn Fn(&[Vec2]) -> Vec<Vec2> + Sync> = match velocity {
        FlowVelocity::Grid(grid) => {
            let u = biot_savart(grid);
            Box::new(move |pts: &[Vec2]| pts.par_iter().map(|&p| u.sample(p)).collect())
        }
        FlowVelocity::SelfConsistent { blob } => {
            let weights: Vec<f64> = flow.initial_values.iter().map(|v| v * flow.seed_area).collect();
            let d2 = blob * blob;
            Box::new(move |pts: &[Vec2]| {
                pts.par_iter()
                    .map(|&p| {
                        let mut acc = Vec2::zeros();
                        for (q, w) in pts.iter().zip(&weights) {
                            let z = p - q;
                            let s = w / (2.0 * PI * (z.norm_squared() + d2));
                            acc += vec2(z.y * s, -z.x * s);
                        }
                        acc
                    })
                    .collect()
            })
        }
    };
    let x0 = &flow.positions;
    let b0 = field(x0);
    let s0: Vec<Vec2> = x0.par_iter().map(|&x| noise.displacement(x, &dw)).collect();
    let pred: Vec<Vec2> = x0.iter().zip(&b0).zip(&s0).map(|((x, b), s)| x + b * dt + s).collect();
    let b1 = field(&pred);
    let next: Vec<Vec2> = (0..x0.len())
        .into_par_iter()
        .map(|m| x0[m] + 0.5 * (b0[m] + b1[m]) * dt + 0.5 * (s0[m] + noise.displacement(pred[m], &dw)))
        .collect();
    if let FlowVelocity::Grid(grid) = velocity {
        let core = grid.half_len - 3.0 * grid.h();
        if let Some(index) = next.iter().position(|p| p.x.abs() > core || p.y.abs() > core) {
            return Err(Error::TracerEscaped { index });
        }
    }
    Ok(FlowMap { positions: next, time: flow.time + dt, ..flow.clone() })
}
