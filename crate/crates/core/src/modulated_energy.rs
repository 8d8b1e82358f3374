//! Modulated energy between an ensemble and a vorticity grid,
//!
//! `𝔉ᴺᵃᵛᵍ = ∬_{∖Δ} g(x − y) d(ξ_N − ξ)(x) d(ξ_N − ξ)(y)`,  `ξ_N = (1/N) Σ δ_{x_i}`,
//!
//! together with its smeared (truncated) versions, truncation radii,
//! close-pair counts and the negative Sobolev distance.
//!
//! Grid integrals replace each cell by the disc of equal area, so every
//! `g`-quadrature uses [`g_disc`] and stays finite at coincident points.
//! Particles see the node potential through the lattice interpolant, which
//! keeps the energy smooth in the particle positions.

use crate::coulomb::{
    cell_disc_radius, DEFAULT_CIRCLE_NODES, circle_circle_interaction, g_disc, g_tilde, grad_g_disc, TruncationVector,
    TWO_PI,
};
use crate::error::{Error, Result};
use crate::euler_pde::VorticityGrid;
use crate::geometry::{vec2, Vec2};
use crate::numerics::conv::{cached_kernel, PaddedConvolver};
use crate::numerics::ordered_sum;
use crate::numerics::fft::{signed_freq, Fft2};
use crate::vortex_sde::VortexEnsemble;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub t: f64,
    #[serde(rename = "F_avg")]
    pub f_avg: f64,
    pub term_pp: f64,
    pub term_px: f64,
    pub term_xx: f64,
    pub smeared: Option<f64>,
    #[serde(skip)]
    pub r_vec: Option<TruncationVector>,
    pub close_pairs: Option<usize>,
    #[serde(rename = "hs")]
    pub hs_distance: Option<f64>,
    pub min_dist: f64,
}

/// Optional diagnostics attached by [`energy_report`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Diagnostics {
    /// Truncation scale `ε₁` for `r_vec` and the smeared energy.
    pub eps1: Option<f64>,
    /// Close-pair threshold `ε₃`.
    pub eps3: Option<f64>,
    /// Sobolev exponent `s < −1`.
    pub sobolev_s: Option<f64>,
}

/// `g ∗ ξ` at the nodes by zero-padded FFT convolution with the cell-disc kernel.
pub fn field_potential(grid: &VorticityGrid) -> Vec<f64> {
    let conv = PaddedConvolver::new(grid.n);
    let h = grid.h();
    let rho = cell_disc_radius(h);
    let kernel = cached_kernel("g_disc", &conv, h, |x, y| g_disc(x.hypot(y), rho));
    let spec = conv.spectrum(&grid.values);
    let a = grid.cell_area();
    conv.convolve(&[(&spec, &kernel)]).into_iter().map(|p| p * a).collect()
}

/// `(g ∗ ξ)(x_i)` for each vortex, interpolated from the node potential.
fn potentials_at(ensemble: &VortexEnsemble, grid: &VorticityGrid, pot: &[f64]) -> Vec<f64> {
    let lattice = grid.lattice();
    ensemble.positions().par_iter().map(|&x| lattice.interpolate(pot, x)).collect()
}

fn self_energy_from(grid: &VorticityGrid, pot: &[f64]) -> f64 {
    grid.values.iter().zip(pot).map(|(v, p)| v * p).sum::<f64>() * grid.cell_area()
}

/// `∬ g ξ ξ` by zero-padded FFT convolution with the cell-disc kernel.
pub fn field_self_energy(grid: &VorticityGrid) -> f64 {
    self_energy_from(grid, &field_potential(grid))
}

fn check_inputs(ensemble: &VortexEnsemble, grid: &VorticityGrid) -> Result<()> {
    ensemble.check_distinct()?;
    grid.check_support()
}

/// `term_pp − 2 term_px + term_xx` with `a = 1/N`.
pub fn modulated_energy(ensemble: &VortexEnsemble, grid: &VorticityGrid) -> Result<EnergyReport> {
    check_inputs(ensemble, grid)?;
    let a = ensemble.weight();
    let term_pp = ensemble.interaction_energy()?;
    let pot = field_potential(grid);
    let term_px = a * potentials_at(ensemble, grid, &pot).iter().sum::<f64>();
    let term_xx = self_energy_from(grid, &pot);
    Ok(EnergyReport {
        t: grid.time,
        f_avg: term_pp - 2.0 * term_px + term_xx,
        term_pp,
        term_px,
        term_xx,
        smeared: None,
        r_vec: None,
        close_pairs: None,
        hs_distance: None,
        min_dist: ensemble.min_pair_distance().0,
    })
}

/// `𝔉_N = Σ_{i≠j} g(x_i − x_j) − 2N Σ_i (g ∗ ξ)(x_i) + N² ∬ g ξ ξ`, equal to `N² 𝔉ᴺᵃᵛᵍ`.
pub fn modulated_energy_unnormalized(ensemble: &VortexEnsemble, grid: &VorticityGrid) -> Result<f64> {
    check_inputs(ensemble, grid)?;
    let n = ensemble.len() as f64;
    let p = ensemble.positions();
    let pp = ordered_sum(
        (0..p.len())
            .into_par_iter()
            .map(|i| (0..p.len()).filter(|&j| j != i).map(|j| -(p[i] - p[j]).norm().ln() / TWO_PI).sum::<f64>()),
    );
    let pot = field_potential(grid);
    let px: f64 = potentials_at(ensemble, grid, &pot).iter().sum();
    Ok(pp - 2.0 * n * px + n * n * self_energy_from(grid, &pot))
}

/// Modulated energy with the requested diagnostics filled in.
pub fn energy_report(ensemble: &VortexEnsemble, grid: &VorticityGrid, opts: &Diagnostics) -> Result<EnergyReport> {
    let mut report = modulated_energy(ensemble, grid)?;
    if let Some(eps1) = opts.eps1 {
        let radii = r_vec(ensemble, eps1)?;
        report.smeared = Some(smeared_energy(ensemble, &radii, grid)?.value);
        report.r_vec = Some(radii);
    }
    if let Some(eps3) = opts.eps3 {
        report.close_pairs = Some(close_pairs(ensemble, eps3)?);
    }
    if let Some(s) = opts.sobolev_s {
        report.hs_distance = Some(sobolev_distance(ensemble, grid, s)?);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmearedEnergy {
    /// `∬ g d(Nξ − Σ_i δ^{(η_i)}_{x_i})^{⊗2}`.
    pub value: f64,
    /// Pairs whose smearing circles intersect.
    pub overlapping_pairs: usize,
}

/// Energy of `Nξ − Σ_i δ^{(η_i)}_{x_i}`, evaluated pairwise from its pieces:
/// the field self-energy, circle means of the node potential, and circle-circle
/// interactions in closed form (`Σ_i g̃(η_i)` for the diagonal).
pub fn smeared_energy(
    ensemble: &VortexEnsemble,
    etas: &TruncationVector,
    grid: &VorticityGrid,
) -> Result<SmearedEnergy> {
    if etas.len() != ensemble.len() {
        return Err(Error::InvalidArgument("one truncation radius per vortex required".into()));
    }
    grid.check_support()?;
    let n = ensemble.len() as f64;
    let pot = field_potential(grid);
    let lattice = grid.lattice();
    let p = ensemble.positions();
    let eta = etas.as_slice();
    let cross = ordered_sum(p.par_iter().zip(eta.par_iter()).map(|(&x, &e)| {
        let m = DEFAULT_CIRCLE_NODES;
        (0..m)
            .map(|k| {
                let th = TWO_PI * k as f64 / m as f64;
                lattice.interpolate(&pot, x + vec2(e * th.cos(), e * th.sin()))
            })
            .sum::<f64>()
            / m as f64
    }));
    let (pairs, overlapping): (f64, usize) = (0..p.len())
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            let mut o = 0;
            for j in (i + 1)..p.len() {
                let d = (p[i] - p[j]).norm();
                if d < eta[i] + eta[j] {
                    o += 1;
                }
                s += 2.0 * circle_circle_interaction(eta[i], eta[j], d);
            }
            (s, o)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let diagonal: f64 = eta.iter().map(|&e| g_tilde(e)).sum();
    let value = n * n * self_energy_from(grid, &pot) - 2.0 * n * cross + diagonal + pairs;
    Ok(SmearedEnergy { value, overlapping_pairs: overlapping })
}

/// `∫_box |∇H_{N,η}|²` by cell quadrature, `∇H = Σ_i ∇g_{η_i}(· − x_i) − N ∇(g ∗ ξ)`.
///
/// Cells crossed by a smearing circle are supersampled on a `supersample²`
/// sub-grid; accurate once every `η_i` spans several cells.
pub fn gradient_energy(
    ensemble: &VortexEnsemble,
    etas: &TruncationVector,
    grid: &VorticityGrid,
    supersample: usize,
) -> Result<f64> {
    if etas.len() != ensemble.len() {
        return Err(Error::InvalidArgument("one truncation radius per vortex required".into()));
    }
    if supersample == 0 {
        return Err(Error::InvalidArgument("supersample factor must be positive".into()));
    }
    let n_f = ensemble.len() as f64;
    let h = grid.h();
    let rho = cell_disc_radius(h);
    let conv = PaddedConvolver::new(grid.n);
    let spec = conv.spectrum(&grid.values);
    let kx = cached_kernel("grad_g_disc_x", &conv, h, |x, y| grad_g_disc(vec2(x, y), rho).x);
    let ky = cached_kernel("grad_g_disc_y", &conv, h, |x, y| grad_g_disc(vec2(x, y), rho).y);
    let area = grid.cell_area();
    let fx: Vec<f64> = conv.convolve(&[(&spec, &kx)]).iter().map(|v| v * area).collect();
    let fy: Vec<f64> = conv.convolve(&[(&spec, &ky)]).iter().map(|v| v * area).collect();
    let lattice = grid.lattice();
    let p = ensemble.positions();
    let eta = etas.as_slice();
    let particle_field = |q: Vec2| -> Vec2 {
        let mut acc = Vec2::zeros();
        for (x, &e) in p.iter().zip(eta) {
            let z = q - x;
            let r2 = z.norm_squared();
            if r2 >= e * e {
                acc -= z / (TWO_PI * r2);
            }
        }
        acc
    };
    let reach = h * std::f64::consts::SQRT_2;
    let total = ordered_sum((0..grid.values.len()).into_par_iter().map(|idx| {
            let c = grid.node(idx);
            let cut = p.iter().zip(eta).any(|(x, &e)| ((c - x).norm() - e).abs() <= reach);
            if !cut {
                let w = vec2(fx[idx], fy[idx]);
                return (particle_field(c) - n_f * w).norm_squared() * area;
            }
            let m = supersample;
            let sub = h / m as f64;
            let mut acc = 0.0;
            for a in 0..m {
                for b in 0..m {
                    let q = c + vec2((b as f64 + 0.5) * sub - h / 2.0, (a as f64 + 0.5) * sub - h / 2.0);
                    let w = vec2(lattice.interpolate(&fx, q), lattice.interpolate(&fy, q));
                    acc += (particle_field(q) - n_f * w).norm_squared();
                }
            }
            acc * sub * sub
        }));
    Ok(total)
}

/// `r_i = min{¼ min_{j≠i} |x_i − x_j|, ε₁}`.
pub fn r_vec(ensemble: &VortexEnsemble, eps1: f64) -> Result<TruncationVector> {
    if !(eps1 > 0.0 && eps1 < 1.0) {
        return Err(Error::InvalidArgument(format!("ε₁ must lie in (0, 1), got {eps1}")));
    }
    let p = ensemble.positions();
    let radii = (0..p.len())
        .into_par_iter()
        .map(|i| {
            let nearest = (0..p.len()).filter(|&j| j != i).map(|j| (p[i] - p[j]).norm()).fold(f64::INFINITY, f64::min);
            (0.25 * nearest).min(eps1)
        })
        .collect();
    TruncationVector::new(radii)
}

/// Number of ordered pairs `(i, j)`, `i ≠ j`, with `|x_i − x_j| ≤ ε₃`.
pub fn close_pairs(ensemble: &VortexEnsemble, eps3: f64) -> Result<usize> {
    if !(eps3 > 0.0) {
        return Err(Error::InvalidArgument(format!("ε₃ must be positive, got {eps3}")));
    }
    let p = ensemble.positions();
    let unordered: usize = (0..p.len())
        .into_par_iter()
        .map(|i| ((i + 1)..p.len()).filter(|&j| (p[i] - p[j]).norm() <= eps3).count())
        .sum();
    Ok(2 * unordered)
}

/// `Σ_{i≠j} (g(x_i − x_j) − g̃(η_i))₊`.
pub fn excess_pair_energy(ensemble: &VortexEnsemble, etas: &TruncationVector) -> Result<f64> {
    ensemble.check_distinct()?;
    let p = ensemble.positions();
    let eta = etas.as_slice();
    Ok(ordered_sum((0..p.len()).into_par_iter().map(|i| {
        (0..p.len())
            .filter(|&j| j != i)
            .map(|j| (-(p[i] - p[j]).norm().ln() / TWO_PI - g_tilde(eta[i])).max(0.0))
            .sum::<f64>()
    })))
}

/// `‖ξ_N − ξ‖_{H^s}` with `‖μ‖² = ∫ ⟨k⟩^{2s} |μ̂(k)|² dk`, `μ̂(k) = ∫ e^{−ik·x} dμ`,
/// sampled on the frequency lattice of the box doubled in each direction.
pub fn sobolev_distance(ensemble: &VortexEnsemble, grid: &VorticityGrid, s: f64) -> Result<f64> {
    if !(s < -1.0) {
        return Err(Error::InvalidArgument(format!("Sobolev exponent must be below −1, got {s}")));
    }
    let n = grid.n;
    let m = 2 * n;
    let big = 2.0 * grid.half_len;
    let dk = PI / big;
    let k: Vec<f64> = (0..m).map(|j| dk * signed_freq(j, m) as f64).collect();

    // grid part: padded FFT, phase (−1)^{mx+my} from the origin −2L
    let mut buf = vec![Complex64::new(0.0, 0.0); m * m];
    for row in 0..n {
        for col in 0..n {
            buf[(row + n / 2) * m + col + n / 2].re = grid.values[row * n + col];
        }
    }
    Fft2::shared(m).forward(&mut buf);
    let area = grid.cell_area();
    let sign = |j: usize| if signed_freq(j, m).rem_euclid(2) == 0 { 1.0 } else { -1.0 };

    // particle part: Σ_i e^{−i k_a y_i} e^{−i k_b x_i} / N as a product of per-axis phases
    let a = ensemble.weight();
    let pts = ensemble.positions();
    let phase = |coord: f64| -> Vec<Complex64> { k.iter().map(|kk| Complex64::from_polar(1.0, -kk * coord)).collect() };
    let ex: Vec<Vec<Complex64>> = pts.par_iter().map(|p| phase(p.x)).collect();
    let ey: Vec<Vec<Complex64>> = pts.par_iter().map(|p| phase(p.y)).collect();

    let total = ordered_sum((0..m).into_par_iter().map(|row| {
            let mut line = vec![Complex64::new(0.0, 0.0); m];
            for (px, py) in ex.iter().zip(&ey) {
                let wy = py[row] * a;
                for (l, e) in line.iter_mut().zip(px) {
                    *l += wy * e;
                }
            }
            let mut acc = 0.0;
            for col in 0..m {
                let field = buf[row * m + col] * (area * sign(row) * sign(col));
                let k2 = k[row] * k[row] + k[col] * k[col];
                acc += (line[col] - field).norm_sqr() * (1.0 + k2).powf(s);
            }
            acc
        }));
    Ok((total * dk * dk).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::euler_pde::InitialProfile;

    fn empty_grid() -> VorticityGrid {
        VorticityGrid::new(2.0, 32, vec![0.0; 32 * 32]).unwrap()
    }

    #[test]
    fn pair_at_unit_distance_has_zero_energy() {
        let e = VortexEnsemble::new(vec![vec2(0.0, 0.0), vec2(1.0, 0.0)]).unwrap();
        let r = modulated_energy(&e, &empty_grid()).unwrap();
        assert_eq!(r.f_avg, 0.0);
    }

    #[test]
    fn truncation_radii() {
        let far = VortexEnsemble::new(vec![vec2(0.0, 0.0), vec2(4.0, 0.0)]).unwrap();
        assert_eq!(r_vec(&far, 0.5).unwrap().as_slice(), &[0.5, 0.5]);
        let near = VortexEnsemble::new(vec![vec2(0.0, 0.0), vec2(0.4, 0.0)]).unwrap();
        let r = r_vec(&near, 0.5).unwrap();
        assert!((r.as_slice()[0] - 0.1).abs() < 1e-16 && (r.as_slice()[1] - 0.1).abs() < 1e-16);
        assert!(r_vec(&near, 1.0).is_err());
    }

    #[test]
    fn close_pairs_are_ordered() {
        let two = VortexEnsemble::new(vec![vec2(0.0, 0.0), vec2(1.0, 0.0)]).unwrap();
        assert_eq!(close_pairs(&two, 0.5).unwrap(), 0);
        let three = VortexEnsemble::new(vec![vec2(0.0, 0.0), vec2(0.1, 0.0), vec2(0.0, 0.1)]).unwrap();
        assert_eq!(close_pairs(&three, 0.2).unwrap(), 6);
    }

    #[test]
    fn sobolev_rejects_large_exponent() {
        let e = VortexEnsemble::new(vec![vec2(0.0, 0.0)]).unwrap();
        assert!(sobolev_distance(&e, &empty_grid(), -1.0).is_err());
    }

    #[test]
    fn sobolev_self_comparison_vanishes() {
        let n = 32;
        let mut values = vec![0.0; n * n];
        let atoms = [(3usize, 7usize), (10, 12), (20, 5), (16, 16)];
        let grid0 = VorticityGrid::new(2.0, n, values.clone()).unwrap();
        let h2 = grid0.cell_area();
        let mut pts = Vec::new();
        for (r, c) in atoms {
            values[r * n + c] = 1.0 / (atoms.len() as f64 * h2);
            pts.push(grid0.node(r * n + c));
        }
        let grid = VorticityGrid::new(2.0, n, values).unwrap();
        let e = VortexEnsemble::new(pts).unwrap();
        assert!(sobolev_distance(&e, &grid, -2.0).unwrap() < 1e-10);
    }

    #[test]
    fn unnormalized_identity() {
        let grid = InitialProfile::Gaussian { width: 0.3, center: [0.0, 0.0] }.grid(3.6, 64).unwrap();
        let e = VortexEnsemble::new(vec![vec2(0.1, 0.0), vec2(-0.2, 0.3), vec2(0.05, -0.25)]).unwrap();
        let avg = modulated_energy(&e, &grid).unwrap().f_avg;
        let full = modulated_energy_unnormalized(&e, &grid).unwrap();
        assert!((9.0 * avg - full).abs() <= 1e-12 * full.abs().max(1.0));
    }
}
