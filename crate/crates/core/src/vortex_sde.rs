//! Stochastic point vortex system with mean-field weights `a = 1/N`:
//!
//! `dx_i = Σ_{j≠i} a ∇⊥g(x_i − x_j) dt + Σ_k σ_k(x_i) ∘ dW^k`,
//!
//! and the additive-noise comparison system with `√(2ν) dW̃^i`.

use crate::coulomb::{g, grad_perp_g, TWO_PI};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::noise::{BrownianPath, NoiseModel};
use crate::numerics::ordered_sum;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Hard floor on the pair distance below which a trajectory is abandoned.
pub const COLLISION_FLOOR: f64 = 1e-10;

/// Maximum dyadic refinement of a base step.
const MAX_REFINEMENT: u32 = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VortexEnsemble {
    positions: Vec<Vec2>,
}

impl VortexEnsemble {
    pub fn new(positions: Vec<Vec2>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidArgument("an ensemble needs at least one vortex".into()));
        }
        if positions.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidArgument("vortex positions must be finite".into()));
        }
        Ok(Self { positions })
    }

    pub fn positions(&self) -> &[Vec2] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// The common vortex weight `a = 1/N`.
    pub fn weight(&self) -> f64 {
        1.0 / self.positions.len() as f64
    }

    pub fn into_positions(self) -> Vec<Vec2> {
        self.positions
    }

    /// Smallest pair distance with the pair realizing it; `∞` for one vortex.
    pub fn min_pair_distance(&self) -> (f64, usize, usize) {
        let p = &self.positions;
        (0..p.len())
            .into_par_iter()
            .map(|i| {
                let mut best = (f64::INFINITY, i, i);
                for j in (i + 1)..p.len() {
                    let d = (p[i] - p[j]).norm();
                    if d < best.0 {
                        best = (d, i, j);
                    }
                }
                best
            })
            .reduce(|| (f64::INFINITY, 0, 0), |a, b| if b.0 < a.0 { b } else { a })
    }

    pub fn check_distinct(&self) -> Result<()> {
        let (d, i, j) = self.min_pair_distance();
        if d == 0.0 {
            return Err(Error::CoincidentPair { i, j });
        }
        Ok(())
    }

    /// `Σ_i a x_i`.
    pub fn center_of_vorticity(&self) -> Vec2 {
        self.positions.iter().sum::<Vec2>() * self.weight()
    }

    /// `Σ_{i≠j} a² g(x_i − x_j)`.
    pub fn interaction_energy(&self) -> Result<f64> {
        self.check_distinct()?;
        let p = &self.positions;
        let a = self.weight();
        let s = ordered_sum(
            (0..p.len()).into_par_iter().map(|i| ((i + 1)..p.len()).map(|j| -(p[i] - p[j]).norm().ln()).sum::<f64>()),
        );
        Ok(2.0 * a * a * s / TWO_PI)
    }

    pub fn translated(&self, shift: Vec2) -> Self {
        Self { positions: self.positions.iter().map(|p| p + shift).collect() }
    }

    /// Reorders vortices: entry `i` of the result is vortex `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self { positions: perm.iter().map(|&i| self.positions[i]).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub dt: f64,
    pub min_pair_distance: f64,
    pub max_drift: f64,
    pub noise_norm: f64,
}

/// Velocities plus the minimum pair distance seen while summing.
struct DriftEval {
    velocities: Vec<Vec2>,
    min_dist: f64,
    pair: (usize, usize),
}

fn drift_eval(positions: &[Vec2], blob: Option<f64>) -> DriftEval {
    let a = 1.0 / positions.len() as f64;
    let delta2 = blob.map(|d| d * d).unwrap_or(0.0);
    let rows: Vec<(Vec2, f64, usize)> = positions
        .par_iter()
        .enumerate()
        .map(|(i, &xi)| {
            let mut v = Vec2::zeros();
            let mut best = (f64::INFINITY, i);
            for (j, &xj) in positions.iter().enumerate() {
                if j == i {
                    continue;
                }
                let z = xi - xj;
                let r2 = z.norm_squared();
                if r2 < best.0 {
                    best = (r2, j);
                }
                if delta2 > 0.0 {
                    let s = 1.0 / (TWO_PI * (r2 + delta2));
                    v += Vec2::new(z.y * s, -z.x * s);
                } else if r2 > 0.0 {
                    v += grad_perp_g(z);
                }
            }
            (a * v, best.0, best.1)
        })
        .collect();
    let mut min_dist = f64::INFINITY;
    let mut pair = (0, 0);
    for (i, r) in rows.iter().enumerate() {
        if r.1 < min_dist * min_dist || (min_dist.is_infinite() && r.1.is_finite()) {
            min_dist = r.1.sqrt();
            pair = (i.min(r.2), i.max(r.2));
        }
    }
    DriftEval { velocities: rows.into_iter().map(|r| r.0).collect(), min_dist, pair }
}

/// `v_i = Σ_{j≠i} a ∇⊥g(x_i − x_j)` by direct summation.
pub fn drift(ensemble: &VortexEnsemble) -> Result<Vec<Vec2>> {
    let eval = drift_eval(ensemble.positions(), None);
    if eval.min_dist == 0.0 {
        return Err(Error::CoincidentPair { i: eval.pair.0, j: eval.pair.1 });
    }
    Ok(eval.velocities)
}

/// Drift with the kernel regularized as `z⊥/(2π(|z|² + δ²))`. Off the exact
/// model; exists for robustness studies only.
pub fn drift_blob(ensemble: &VortexEnsemble, delta: f64) -> Vec<Vec2> {
    drift_eval(ensemble.positions(), Some(delta)).velocities
}

fn guard(min_dist: f64, pair: (usize, usize), t: f64) -> Result<()> {
    if min_dist < COLLISION_FLOOR {
        return Err(Error::Collision { t, i: pair.0, j: pair.1, dist: min_dist });
    }
    Ok(())
}

/// Heun step with explicit increments `dw` (one per noise mode).
pub fn heun_step(
    ensemble: &VortexEnsemble,
    noise: &NoiseModel,
    dw: &[f64],
    dt: f64,
    blob: Option<f64>,
    t: f64,
) -> Result<(VortexEnsemble, StepStats)> {
    let x0 = ensemble.positions();
    let b0 = drift_eval(x0, blob);
    guard(b0.min_dist, b0.pair, t)?;
    let s0: Vec<Vec2> = x0.iter().map(|&x| noise.displacement(x, dw)).collect();
    let pred: Vec<Vec2> =
        x0.iter().zip(&b0.velocities).zip(&s0).map(|((x, b), s)| x + b * dt + s).collect();
    let b1 = drift_eval(&pred, blob);
    guard(b1.min_dist, b1.pair, t + dt)?;
    let next: Vec<Vec2> = x0
        .iter()
        .zip(&pred)
        .enumerate()
        .map(|(i, (x, p))| {
            let s1 = noise.displacement(*p, dw);
            x + 0.5 * (b0.velocities[i] + b1.velocities[i]) * dt + 0.5 * (s0[i] + s1)
        })
        .collect();
    let stats = StepStats {
        dt,
        min_pair_distance: b0.min_dist,
        max_drift: b0.velocities.iter().map(|v| v.norm()).fold(0.0, f64::max),
        noise_norm: dw.iter().map(|w| w * w).sum::<f64>().sqrt(),
    };
    Ok((VortexEnsemble { positions: next }, stats))
}

/// One Stratonovich step over step `n` of `path`; `dt` must equal the path step.
pub fn step_stratonovich(
    ensemble: &VortexEnsemble,
    noise: &NoiseModel,
    path: &BrownianPath,
    n: u64,
    dt: f64,
) -> Result<(VortexEnsemble, StepStats)> {
    check_path_step(path, dt)?;
    let dw = path.increments(noise.count(), n);
    heun_step(ensemble, noise, &dw, dt, None, n as f64 * dt)
}

fn check_path_step(path: &BrownianPath, dt: f64) -> Result<()> {
    if !(dt > 0.0) || (dt - path.dt()).abs() > 1e-12 * path.dt() {
        return Err(Error::InvalidArgument(format!("step {dt} does not match the path step {}", path.dt())));
    }
    Ok(())
}

/// Euler–Maruyama step of the additive system with per-vortex increments `dw`.
pub fn euler_additive_step(
    ensemble: &VortexEnsemble,
    nu: f64,
    dw: &[Vec2],
    dt: f64,
    t: f64,
) -> Result<(VortexEnsemble, StepStats)> {
    if nu < 0.0 {
        return Err(Error::InvalidArgument(format!("viscosity must be nonnegative, got {nu}")));
    }
    let b = drift_eval(ensemble.positions(), None);
    guard(b.min_dist, b.pair, t)?;
    let amp = (2.0 * nu).sqrt();
    let next = ensemble
        .positions()
        .iter()
        .zip(&b.velocities)
        .zip(dw)
        .map(|((x, v), w)| x + v * dt + amp * w)
        .collect();
    let stats = StepStats {
        dt,
        min_pair_distance: b.min_dist,
        max_drift: b.velocities.iter().map(|v| v.norm()).fold(0.0, f64::max),
        noise_norm: dw.iter().map(|w| w.norm_squared()).sum::<f64>().sqrt(),
    };
    Ok((VortexEnsemble { positions: next }, stats))
}

pub fn step_additive(
    ensemble: &VortexEnsemble,
    nu: f64,
    path: &BrownianPath,
    n: u64,
    dt: f64,
) -> Result<VortexEnsemble> {
    check_path_step(path, dt)?;
    let dw: Vec<Vec2> = (0..ensemble.len()).map(|i| path.vortex_increment(i, n)).collect();
    Ok(euler_additive_step(ensemble, nu, &dw, dt, n as f64 * dt)?.0)
}

/// `dt ← min(dt_max, c_cfl · d_min / V_max)`, realized by dyadic splitting of the path step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtController {
    pub dt_max: f64,
    pub c_cfl: f64,
}

impl Default for DtController {
    fn default() -> Self {
        Self { dt_max: 1e-2, c_cfl: 0.1 }
    }
}

impl DtController {
    /// Dyadic level `L` with `base / 2^L` below the admissible step.
    pub fn refinement_level(&self, base: f64, ensemble: &VortexEnsemble) -> u32 {
        let eval = drift_eval(ensemble.positions(), None);
        let vmax = eval.velocities.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let mut target = self.dt_max;
        if vmax > 0.0 && eval.min_dist.is_finite() {
            target = target.min(self.c_cfl * eval.min_dist / vmax);
        }
        let mut level = 0;
        while base / f64::from(1u32 << level) > target && level < MAX_REFINEMENT {
            level += 1;
        }
        level
    }
}

/// Sampled trajectory with per-step statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub frames: Vec<VortexEnsemble>,
    pub stats: Vec<StepStats>,
}

impl Trajectory {
    pub fn last(&self) -> &VortexEnsemble {
        self.frames.last().expect("trajectory holds the initial frame")
    }
}

/// Advances over `steps` base steps of `path`, sampling every `stride` base steps.
pub fn run(
    ensemble: &VortexEnsemble,
    noise: &NoiseModel,
    path: &BrownianPath,
    steps: u64,
    controller: &DtController,
    stride: u64,
) -> Result<Trajectory> {
    drive(ensemble, path, steps, controller, stride, |state, n, level, t| {
        let base = path.dt();
        let sub: Vec<Vec<f64>> = (0..noise.count()).map(|k| path.refined_increments(k, n, level)).collect();
        let dt = base / f64::from(1u32 << level);
        let mut cur = state.clone();
        let mut stats = Vec::with_capacity(1 << level);
        for s in 0..(1usize << level) {
            let dw: Vec<f64> = sub.iter().map(|row| row[s]).collect();
            let (next, st) = heun_step(&cur, noise, &dw, dt, None, t + s as f64 * dt)?;
            cur = next;
            stats.push(st);
        }
        Ok((cur, stats))
    })
}

/// Additive-noise analogue of [`run`].
pub fn run_additive(
    ensemble: &VortexEnsemble,
    nu: f64,
    path: &BrownianPath,
    steps: u64,
    controller: &DtController,
    stride: u64,
) -> Result<Trajectory> {
    drive(ensemble, path, steps, controller, stride, |state, n, level, t| {
        let dt = path.dt() / f64::from(1u32 << level);
        let sub: Vec<Vec<Vec2>> =
            (0..state.len()).map(|i| path.refined_vortex_increments(i, n, level)).collect();
        let mut cur = state.clone();
        let mut stats = Vec::with_capacity(1 << level);
        for s in 0..(1usize << level) {
            let dw: Vec<Vec2> = sub.iter().map(|row| row[s]).collect();
            let (next, st) = euler_additive_step(&cur, nu, &dw, dt, t + s as f64 * dt)?;
            cur = next;
            stats.push(st);
        }
        Ok((cur, stats))
    })
}

fn drive<F>(
    ensemble: &VortexEnsemble,
    path: &BrownianPath,
    steps: u64,
    controller: &DtController,
    stride: u64,
    mut advance: F,
) -> Result<Trajectory>
where
    F: FnMut(&VortexEnsemble, u64, u32, f64) -> Result<(VortexEnsemble, Vec<StepStats>)>,
{
    let stride = stride.max(1);
    let mut traj = Trajectory { times: vec![0.0], frames: vec![ensemble.clone()], stats: Vec::new() };
    let mut state = ensemble.clone();
    for n in 0..steps {
        let t = n as f64 * path.dt();
        let level = controller.refinement_level(path.dt(), &state);
        let (next, stats) = advance(&state, n, level, t)?;
        state = next;
        traj.stats.extend(stats);
        if (n + 1) % stride == 0 || n + 1 == steps {
            traj.times.push((n + 1) as f64 * path.dt());
            traj.frames.push(state.clone());
        }
    }
    Ok(traj)
}

/// Pair energy evaluated through [`g`]; used by tests as a slow reference.
pub fn interaction_energy_reference(ensemble: &VortexEnsemble) -> Result<f64> {
    let p = ensemble.positions();
    let a = ensemble.weight();
    let mut s = 0.0;
    for i in 0..p.len() {
        for j in 0..p.len() {
            if i != j {
                s += a * a * g(p[i] - p[j])?;
            }
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::vec2;
    use crate::noise::NoiseMode;
    use std::f64::consts::PI;

    fn pair(d: f64) -> VortexEnsemble {
        VortexEnsemble::new(vec![vec2(-d / 2.0, 0.0), vec2(d / 2.0, 0.0)]).unwrap()
    }

    #[test]
    fn two_vortex_speeds() {
        let d = 0.3;
        let v = drift(&pair(d)).unwrap();
        for vi in &v {
            assert!((vi.norm() - 1.0 / (4.0 * PI * d)).abs() < 1e-14);
            assert!(vi.x.abs() < 1e-16);
        }
        assert!((v[0] + v[1]).norm() < 1e-16);
        let swapped = drift(&pair(d).permuted(&[1, 0])).unwrap();
        assert_eq!(swapped[0], v[1]);
    }

    #[test]
    fn single_vortex_is_still() {
        let e = VortexEnsemble::new(vec![vec2(0.2, 0.1)]).unwrap();
        assert_eq!(drift(&e).unwrap(), vec![Vec2::zeros()]);
    }

    #[test]
    fn coincident_pair_is_named() {
        let e = VortexEnsemble::new(vec![vec2(0.0, 0.0), vec2(1.0, 0.0), vec2(0.0, 0.0)]).unwrap();
        assert_eq!(drift(&e), Err(Error::CoincidentPair { i: 0, j: 2 }));
    }

    #[test]
    fn three_vortices_match_triple_loop() {
        let pts = vec![vec2(0.1, 0.2), vec2(-0.3, 0.05), vec2(0.25, -0.4)];
        let e = VortexEnsemble::new(pts.clone()).unwrap();
        let v = drift(&e).unwrap();
        for i in 0..3 {
            let mut acc = Vec2::zeros();
            for j in 0..3 {
                if i != j {
                    let z = pts[i] - pts[j];
                    let r2 = z.x * z.x + z.y * z.y;
                    acc += vec2(z.y, -z.x) / (3.0 * 2.0 * PI * r2);
                }
            }
            assert!((acc - v[i]).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_noise_step_is_heun() {
        let e = pair(0.5);
        let (a, _) = heun_step(&e, &NoiseModel::none(), &[], 0.01, None, 0.0).unwrap();
        let b0 = drift(&e).unwrap();
        let pred = VortexEnsemble::new(
            e.positions().iter().zip(&b0).map(|(x, v)| x + v * 0.01).collect(),
        )
        .unwrap();
        let b1 = drift(&pred).unwrap();
        for i in 0..2 {
            let expect = e.positions()[i] + 0.005 * (b0[i] + b1[i]);
            assert!((a.positions()[i] - expect).norm() < 1e-16);
        }
    }

    #[test]
    fn path_step_must_match() {
        let path = BrownianPath::new(1, 0.01).unwrap();
        assert!(step_stratonovich(&pair(1.0), &NoiseModel::none(), &path, 0, 0.02).is_err());
    }

    #[test]
    fn collision_floor_aborts() {
        let e = VortexEnsemble::new(vec![vec2(0.0, 0.0), vec2(1e-11, 0.0)]).unwrap();
        assert!(matches!(heun_step(&e, &NoiseModel::none(), &[], 1e-3, None, 0.5), Err(Error::Collision { .. })));
    }

    #[test]
    fn constant_noise_translates_rigidly() {
        let noise = NoiseModel::new(vec![NoiseMode::constant(0.4, vec2(1.0, 2.0)).unwrap()]);
        let e = VortexEnsemble::new(vec![vec2(0.0, 0.0), vec2(0.3, 0.1), vec2(-0.2, 0.25)]).unwrap();
        let path = BrownianPath::new(5, 1e-3).unwrap();
        let ctl = DtController { dt_max: 1e-3, c_cfl: 0.1 };
        let noisy = run(&e, &noise, &path, 200, &ctl, 200).unwrap();
        let still = run(&e, &NoiseModel::none(), &path, 200, &ctl, 200).unwrap();
        let w: f64 = path.increments_range(0, 0..200).iter().sum();
        let shift = noise.sigma_eval(0, Vec2::zeros()).unwrap() * w;
        for (a, b) in noisy.last().positions().iter().zip(still.last().positions()) {
            assert!((a - (b + shift)).norm() < 1e-10);
        }
    }

    #[test]
    fn controller_refines_close_pairs() {
        let ctl = DtController { dt_max: 0.1, c_cfl: 0.1 };
        assert_eq!(ctl.refinement_level(0.05, &pair(1.0)), 0);
        assert!(ctl.refinement_level(0.05, &pair(0.01)) > 5);
    }

    #[test]
    fn energy_matches_reference() {
        let e = VortexEnsemble::new(vec![vec2(0.0, 0.0), vec2(0.3, 0.1), vec2(-0.2, 0.25)]).unwrap();
        let a = e.interaction_energy().unwrap();
        let b = interaction_energy_reference(&e).unwrap();
        assert!((a - b).abs() < 1e-15);
    }
}
