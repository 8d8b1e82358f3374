//! Weak check of the Itô identity for the regularized energy `⟨F⟩_ε`, `ε = ln N / N`:
//!
//! `E[⟨F⟩_ε(Δ) − ⟨F⟩_ε(0)] ≈ Δ (T₁ + T₂ + T₃ + T₄)` from a deterministic start, with
//!
//! * `T₁ = (F/⟨F⟩) ∬ K₁,ᵤ`, `u` the Biot–Savart velocity of `ξ`,
//! * `T₂ = ½ Σ_k (F/⟨F⟩) ∬ K₁,(σ_k·∇)σ_k`,
//! * `T₃ = ½ Σ_k (F/⟨F⟩) ∬ K₂,σ_k`,
//! * `T₄ = ½ Σ_k (ε²/⟨F⟩³) (∬ K₁,σ_k)²`,
//!
//! all forms taken against `(ξ_N − ξ)^{⊗2}` off the diagonal.
//! Realizations come in antithetic pairs `(ΔW, −ΔW)`.

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use vortexmf_core::bounds::{default_regularization, regularizer};
use vortexmf_core::euler_pde::{self, sample_ensemble, VorticityGrid};
use vortexmf_core::forms_sio::{form_k1, form_k2, Diagonal, FieldKind, SignedMeasure, VelocityFieldModel};
use vortexmf_core::modulated_energy::modulated_energy;
use vortexmf_core::noise::{BrownianPath, NoiseModel};
use vortexmf_core::vortex_sde::{heun_step, DtController, VortexEnsemble};
use vortexmf_core::{vec2, Mat2, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItoTerms {
    pub drift: f64,
    pub ito_drift: f64,
    pub second_order: f64,
    pub quadratic_variation: f64,
}

impl ItoTerms {
    pub fn total(&self) -> f64 {
        self.drift + self.ito_drift + self.second_order + self.quadratic_variation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItoRow {
    pub delta: f64,
    pub mean_increment: f64,
    pub stderr: f64,
    pub predicted: f64,
    pub residual: f64,
    pub excluded_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItoReport {
    pub n: usize,
    pub realizations: usize,
    pub eps: f64,
    pub f0: f64,
    pub terms: ItoTerms,
    pub rows: Vec<ItoRow>,
    /// Least-squares slope of `ln residual` against `ln Δ`.
    pub order: Option<f64>,
}

/// `x ↦ ½ Σ_k (σ_k·∇)σ_k` with a centered-difference Jacobian.
fn ito_drift_field(noise: &NoiseModel) -> Result<VelocityFieldModel> {
    let noise = noise.clone();
    let step = 1e-6;
    let eval = Arc::new(move |x: Vec2| {
        let d = |e: Vec2| (noise.ito_correction(x + e) - noise.ito_correction(x - e)) / (2.0 * step);
        let (cx, cy) = (d(vec2(step, 0.0)), d(vec2(0.0, step)));
        (noise.ito_correction(x), Mat2::new(cx.x, cy.x, cx.y, cy.y))
    });
    Ok(VelocityFieldModel::new(FieldKind::AnalyticTest, eval, f64::INFINITY, f64::INFINITY, None)?)
}

/// The four non-martingale terms at `(ensemble, grid)`.
pub fn ito_terms(ensemble: &VortexEnsemble, grid: &VorticityGrid, noise: &NoiseModel, eps: f64) -> Result<ItoTerms> {
    let f = modulated_energy(ensemble, grid)?.f_avg;
    let reg = regularizer(f, eps);
    let m = SignedMeasure::difference(ensemble, grid);
    let d = Diagonal::Excluded;
    let u = VelocityFieldModel::biot_savart(grid);
    let drift = f / reg * form_k1(&u, &m, d)?;
    let ito_drift = if noise.count() == 0 { 0.0 } else { f / reg * form_k1(&ito_drift_field(noise)?, &m, d)? };
    let (mut k2, mut qv) = (0.0, 0.0);
    for mode in noise.modes() {
        let v = VelocityFieldModel::noise_mode(mode);
        k2 += form_k2(&v, &m, d)?;
        qv += form_k1(&v, &m, d)?.powi(2);
    }
    Ok(ItoTerms {
        drift,
        ito_drift,
        second_order: 0.5 * f / reg * k2,
        quadratic_variation: 0.5 * eps * eps / reg.powi(3) * qv,
    })
}

/// `⟨F⟩_ε` after one step of length `delta` driven by `sign · ΔW`.
fn endpoint(
    ens: &VortexEnsemble,
    grid: &VorticityGrid,
    noise: &NoiseModel,
    path: &BrownianPath,
    controller: &DtController,
    sign: f64,
    eps: f64,
) -> vortexmf_core::Result<f64> {
    let delta = path.dt();
    let level = controller.refinement_level(delta, ens);
    let sub: Vec<Vec<f64>> = (0..noise.count()).map(|k| path.refined_increments(k, 0, level)).collect();
    let h = delta / f64::from(1u32 << level);
    let mut cur = ens.clone();
    for s in 0..(1usize << level) {
        let dw: Vec<f64> = sub.iter().map(|row| sign * row[s]).collect();
        cur = heun_step(&cur, noise, &dw, h, None, s as f64 * h)?.0;
    }
    let dw: Vec<f64> = path.increments(noise.count(), 0).iter().map(|w| sign * w).collect();
    let field = euler_pde::step_with_increments(grid, noise, &dw, delta)?;
    Ok(regularizer(modulated_energy(&cur, &field)?.f_avg, eps))
}

fn slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// Uses the first particle count, `realizations` rounded up to whole antithetic pairs, and `ito_deltas`.
pub fn ito_residual_check(cfg: &ExperimentConfig) -> Result<ItoReport> {
    cfg.validate()?;
    let n = cfg.n_list[0];
    if n > 64 {
        return Err(HarnessError::Config(format!("the Itô check is meant for N ≤ 64, got {n}")));
    }
    let grid = cfg.initial_grid()?;
    let noise = cfg.noise_model();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ens = sample_ensemble(&grid, n, cfg.sampling, &mut rng)?;
    let eps = default_regularization(n as u64);
    let f0 = modulated_energy(&ens, &grid)?.f_avg;
    let start = regularizer(f0, eps);
    let terms = ito_terms(&ens, &grid, &noise, eps)?;
    let pairs = cfg.realizations.div_ceil(2);
    let mut rows = Vec::with_capacity(cfg.ito_deltas.len());
    for &delta in &cfg.ito_deltas {
        let controller = DtController { dt_max: delta, c_cfl: cfg.particle_c_cfl };
        let outcomes: Vec<Option<f64>> = (0..pairs)
            .into_par_iter()
            .map(|p| {
                let path = BrownianPath::for_realization(cfg.seed, p as u64, delta).ok()?;
                let plus = endpoint(&ens, &grid, &noise, &path, &controller, 1.0, eps).ok()?;
                let minus = endpoint(&ens, &grid, &noise, &path, &controller, -1.0, eps).ok()?;
                Some(0.5 * (plus + minus) - start)
            })
            .collect();
        let ok: Vec<f64> = outcomes.iter().flatten().copied().collect();
        let m = ok.len() as f64;
        let mean = ok.iter().sum::<f64>() / m;
        let var = ok.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
        let predicted = delta * terms.total();
        rows.push(ItoRow {
            delta,
            mean_increment: mean,
            stderr: (var / m).sqrt(),
            predicted,
            residual: (mean - predicted).abs(),
            excluded_pairs: pairs - ok.len(),
        });
    }
    let lx: Vec<f64> = rows.iter().map(|r| r.delta.ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.residual.ln()).collect();
    let order = if ly.iter().all(|y| y.is_finite()) { slope(&lx, &ly) } else { None };
    Ok(ItoReport { n, realizations: 2 * pairs, eps, f0, terms, rows, order })
}


#[cfg(test)]
mod curvature {
    use super::*;
    use vortexmf_core::euler_pde::{InitialProfile, Sampling};
    use vortexmf_core::forms_sio::{bilinear_form, FormOrder};
    use vortexmf_core::noise::NoiseMode;

    #[test]
    fn energy_curvature_along_a_shear_flow_matches_the_second_order_form() {
        let grid = InitialProfile::SmoothedDisc { radius: 0.5, edge: 0.15, center: [0.0, 0.0] }.grid(2.5, 256).unwrap();
        let ens = sample_ensemble(&grid, 32, Sampling::Stratified, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let noise = NoiseModel::new(vec![NoiseMode::fourier(0.3, vec2(1.0, 1.0), 1.0).unwrap()]);
        let lattice = grid.lattice();
        let parts = |w: f64| {
            let moved =
                VortexEnsemble::new(ens.positions().iter().map(|&x| x + noise.displacement(x, &[w])).collect()).unwrap();
            let mut g = grid.clone();
            g.values = (0..grid.values.len())
                .map(|c| {
                    let x = grid.node(c);
                    lattice.interpolate(&grid.values, x - noise.displacement(x, &[w]))
                })
                .collect();
            let r = modulated_energy(&moved, &g).unwrap();
            [r.term_pp, -2.0 * r.term_px, r.term_xx]
        };
        let m = SignedMeasure::difference(&ens, &grid);
        let v = VelocityFieldModel::noise_mode(&noise.modes()[0]);
        let form = bilinear_form(FormOrder::Second, &v, &m, &m, Diagonal::Excluded).unwrap();
        let w = 0.01;
        let (z, p, q) = (parts(0.0), parts(w), parts(-w));
        for (k, expected) in [form.atoms, form.cross, form.field].into_iter().enumerate() {
            let d2 = (p[k] + q[k] - 2.0 * z[k]) / (w * w);
            assert!((d2 - expected).abs() <= 1e-3 * expected.abs(), "part {k}: {d2:e} vs {expected:e}");
        }
    }
}
