//! Named invariant and oracle suites. Every tolerance is a constant of this module.

use crate::error::{HarnessError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI};
use std::time::Instant;
use vortexmf_core::bounds::{
    admissible, default_regularization, envelope_value, epsilon_schedule, osgood_m, osgood_minv, regularizer,
    EnvelopeParams,
};
use vortexmf_core::coulomb::{g_tilde, g_trunc, grad_g_trunc, hess_g, smeared_delta, TruncationVector, DEFAULT_CIRCLE_NODES};
use vortexmf_core::euler_pde::{self, cfl_limit, lp_norm, sample_ensemble, InitialProfile, Lp, Sampling, VorticityGrid};
use vortexmf_core::forms_sio::{
    form_k1, form_k2, probe_operator_norm, CommutatorScales, ComponentKernel, Diagonal, FormOrder, SignedMeasure,
    VelocityFieldModel,
};
use vortexmf_core::modulated_energy::{modulated_energy, modulated_energy_unnormalized, smeared_energy};
use vortexmf_core::noise::{BrownianPath, NoiseMode, NoiseModel};
use vortexmf_core::{vec2, Vec2};

pub const SUITES: [&str; 6] =
    ["coulomb-identities", "renormalization-limit", "prop-ratios", "sio-probes", "osgood", "pde-conservation"];

pub const SMEARING_TOL: f64 = 1e-8;
pub const DERIVATIVE_REL_TOL: f64 = 1e-5;
pub const RENORMALIZATION_REL_GAP: f64 = 1e-3;
pub const RATIO_SPREAD: f64 = 0.5;
pub const PROBE_SPREAD: f64 = 0.2;
pub const CIRCLE_AVERAGE_TOL: f64 = 1e-12;
pub const OSGOOD_TOL: f64 = 1e-12;
pub const CONSERVATION_TOL: f64 = 1e-2;

pub const PROP_SIZES: [usize; 3] = [64, 256, 1024];
pub const PROP_INSTANCES: usize = 200;
pub const PROBE_GRIDS: [usize; 3] = [128, 256, 512];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `value ≤ limit`; NaN fails.
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, passed: value <= limit }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self { name: name.into(), value: f64::from(u8::from(ok)), limit: 1.0, passed: ok }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    /// Human-readable table lines.
    pub table: Vec<String>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }
}

pub fn verify(suite: &str) -> Result<SuiteReport> {
    let start = Instant::now();
    let (checks, table) = match suite {
        "coulomb-identities" => coulomb_identities()?,
        "renormalization-limit" => renormalization_limit()?,
        "prop-ratios" => prop_ratios()?,
        "sio-probes" => sio_probes()?,
        "osgood" => osgood()?,
        "pde-conservation" => pde_conservation()?,
        other => return Err(HarnessError::UnknownSuite(other.to_string())),
    };
    Ok(SuiteReport { suite: suite.to_string(), checks, table, seconds: start.elapsed().as_secs_f64() })
}

type SuiteOutput = Result<(Vec<Check>, Vec<String>)>;

fn unit(theta: f64) -> Vec2 {
    vec2(theta.cos(), theta.sin())
}

fn coulomb_identities() -> SuiteOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut smear = 0.0f64;
    for eta in [0.05, 0.3, 1.0] {
        let center = vec2(0.3, -0.2);
        let ring = smeared_delta(center, eta, DEFAULT_CIRCLE_NODES)?;
        for ratio in [0.0, 0.5, 1.5, 10.0] {
            let x = center + ratio * eta * unit(rng.gen_range(0.0..2.0 * PI));
            smear = smear.max((ring.potential(x)? - g_trunc(x - center, eta)?).abs());
        }
    }
    let (mut grad, mut hess) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let r = rng.gen_range(0.05..3.0);
        let x = r * unit(rng.gen_range(0.0..2.0 * PI));
        let eta = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.1..0.8) * r };
        let step = 1e-5 * r;
        let e = [vec2(step, 0.0), vec2(0.0, step)];
        let gt = |p: Vec2| g_trunc(p, eta.max(1e-300));
        let fd = vec2((gt(x + e[0])? - gt(x - e[0])?) / (2.0 * step), (gt(x + e[1])? - gt(x - e[1])?) / (2.0 * step));
        let exact = grad_g_trunc(x, eta)?;
        grad = grad.max((fd - exact).norm() / exact.norm());
        let h = hess_g(x)?;
        for (axis, de) in e.iter().enumerate() {
            let col = (grad_g_trunc(x + de, 0.0)? - grad_g_trunc(x - de, 0.0)?) / (2.0 * step);
            hess = hess.max((col - h.column(axis)).norm() / h.norm());
        }
    }
    Ok((
        vec![
            Check::at_most("smearing identity, 256 nodes", smear, SMEARING_TOL),
            Check::at_most("grad g_trunc vs differences (rel)", grad, DERIVATIVE_REL_TOL),
            Check::at_most("hess g vs differences (rel)", hess, DERIVATIVE_REL_TOL),
        ],
        vec![],
    ))
}

/// Gaps `|[smeared(η) − Σ g̃(η_i)] − F_N|` at `η = {1e-2, 1e-3, 1e-4}·d_min` for five configurations.
pub fn renormalization_gaps() -> Result<Vec<(f64, [f64; 3])>> {
    let grid = InitialProfile::SmoothedDisc { radius: 0.5, edge: 0.15, center: [0.0, 0.0] }.grid(2.0, 64)?;
    (0..5u64)
        .map(|k| {
            let ens = sample_ensemble(&grid, 32, Sampling::Iid, &mut ChaCha8Rng::seed_from_u64(100 + k))?;
            let f_n = modulated_energy_unnormalized(&ens, &grid)?;
            let d_min = ens.min_pair_distance().0;
            let mut gaps = [0.0; 3];
            for (gap, f) in gaps.iter_mut().zip([1e-2, 1e-3, 1e-4]) {
                let etas = TruncationVector::uniform(ens.len(), f * d_min)?;
                let s = smeared_energy(&ens, &etas, &grid)?.value;
                *gap = (s - 32.0 * g_tilde(f * d_min) - f_n).abs();
            }
            Ok((f_n, gaps))
        })
        .collect()
}

fn renormalization_limit() -> SuiteOutput {
    let rows = renormalization_gaps()?;
    let mut checks = Vec::new();
    let mut table = vec!["config  F_N  gap(1e-2)  gap(1e-3)  gap(1e-4)".to_string()];
    for (k, (f_n, g)) in rows.iter().enumerate() {
        table.push(format!("{k}  {f_n:.6e}  {:.3e}  {:.3e}  {:.3e}", g[0], g[1], g[2]));
        checks.push(Check::holds(format!("config {k}: gaps decrease"), g[1] < g[0] && g[2] < g[1]));
        checks.push(Check::at_most(
            format!("config {k}: final gap / (|F_N| + 1)"),
            g[2] / (f_n.abs() + 1.0),
            RENORMALIZATION_REL_GAP,
        ));
    }
    Ok((checks, table))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropRatios {
    pub n: usize,
    /// Largest `LHS / RHS` over the instances, one entry per proposition (first order Lipschitz,
    /// first order log-Lipschitz, second order).
    pub max_ratio: [f64; 3],
}

fn random_modes(rng: &mut ChaCha8Rng) -> Result<VelocityFieldModel> {
    let modes = (0..2)
        .map(|_| {
            let k = vec2(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let k = if k.norm() < 0.3 { vec2(1.0, 0.0) } else { k };
            NoiseMode::fourier(rng.gen_range(-1.0..1.0), k, rng.gen_range(0.0..2.0 * PI))
        })
        .collect::<vortexmf_core::Result<Vec<_>>>()?;
    Ok(VelocityFieldModel::mode_sum(modes))
}

/// Ratios of the three commutator estimates over random instances at particle count `n`.
pub fn prop_ratios_at(n: usize, instances: usize) -> Result<PropRatios> {
    let grid = InitialProfile::SmoothedDisc { radius: 0.5, edge: 0.15, center: [0.0, 0.0] }.grid(2.0, 64)?;
    let density_sup = lp_norm(&grid, Lp::Inf);
    let mut max_ratio = [0.0f64; 3];
    for i in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(((n as u64) << 32) + i as u64);
        let sampling = if rng.gen_bool(0.5) { Sampling::Iid } else { Sampling::Stratified };
        let ens = sample_ensemble(&grid, n, sampling, &mut rng)?;
        let f = modulated_energy(&ens, &grid)?.f_avg;
        let s = epsilon_schedule(regularizer(f, default_regularization(n as u64)), n as u64, density_sup)?;
        let scales = CommutatorScales { f_avg: f, n, eps1: s.eps1, eps2: s.eps2, eps3: s.eps3, density_sup };
        let m = SignedMeasure::difference(&ens, &grid);
        let v = random_modes(&mut rng)?;
        let shear = VelocityFieldModel::log_lipschitz_shear(rng.gen_range(-0.5..0.5));
        let ll = shear.log_lipschitz().expect("shear is log-Lipschitz");
        let lhs = [
            form_k1(&v, &m, Diagonal::Excluded)?.abs(),
            form_k1(&shear, &m, Diagonal::Excluded)?.abs(),
            form_k2(&v, &m, Diagonal::Excluded)?.abs(),
        ];
        let rhs = [
            scales.first_order_lipschitz(v.lipschitz()),
            scales.first_order_log_lipschitz(ll),
            scales.second_order(v.lipschitz()),
        ];
        for j in 0..3 {
            let r = if rhs[j] > 0.0 { lhs[j] / rhs[j] } else { f64::INFINITY };
            max_ratio[j] = max_ratio[j].max(r);
        }
    }
    Ok(PropRatios { n, max_ratio })
}

/// `max_N |c_N − mean| / mean` of a list of fitted constants.
pub fn relative_spread(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).abs() / mean).fold(0.0, f64::max)
}

fn prop_ratios() -> SuiteOutput {
    let rows: Vec<PropRatios> =
        PROP_SIZES.iter().map(|&n| prop_ratios_at(n, PROP_INSTANCES)).collect::<Result<_>>()?;
    let names = ["first order, Lipschitz", "first order, log-Lipschitz", "second order"];
    let mut table = vec!["N  C(first, Lip)  C(first, LL)  C(second)".to_string()];
    table.extend(rows.iter().map(|r| format!("{}  {:.4e}  {:.4e}  {:.4e}", r.n, r.max_ratio[0], r.max_ratio[1], r.max_ratio[2])));
    let mut checks = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let c: Vec<f64> = rows.iter().map(|r| r.max_ratio[j]).collect();
        checks.push(Check::holds(format!("{name}: ratios finite"), c.iter().all(|x| x.is_finite())));
        checks.push(Check::at_most(format!("{name}: spread across N"), relative_spread(&c), RATIO_SPREAD));
    }
    Ok((checks, table))
}

/// Smooth test field for the operator probes.
pub fn probe_field() -> Result<VelocityFieldModel> {
    Ok(VelocityFieldModel::mode_sum(vec![
        NoiseMode::fourier(0.6, vec2(1.2, 0.5), 0.3)?,
        NoiseMode::fourier(-0.4, vec2(-0.7, 1.4), 1.9)?,
    ]))
}

/// Fitted constants `‖∇T∇‖ / ‖∇v‖^j` for both orders on each probe grid.
pub fn probe_constants(grids: &[usize]) -> Result<Vec<[f64; 2]>> {
    let v = probe_field()?;
    grids
        .iter()
        .map(|&n| {
            let mut out = [0.0; 2];
            for (slot, order) in out.iter_mut().zip([FormOrder::First, FormOrder::Second]) {
                let mut rng = ChaCha8Rng::seed_from_u64(7);
                *slot = probe_operator_norm(&v, order, 2.0, n, 20, 10, &mut rng)?.fitted_constant;
            }
            Ok(out)
        })
        .collect()
}

/// Largest `|mean over S¹|` of every component kernel at 4096 nodes.
pub fn component_circle_average() -> Result<f64> {
    let nodes: Vec<Vec2> = (0..4096).map(|k| unit(2.0 * PI * k as f64 / 4096.0)).collect();
    let mut kernels = Vec::new();
    let ix = [1usize, 2];
    for &a in &ix {
        for &b in &ix {
            kernels.push(ComponentKernel::Zero { alpha: a, beta: b });
            for &r in &ix {
                for &nu in &ix {
                    kernels.push(ComponentKernel::One { alpha: a, beta: b, rho: r, nu });
                    for &a2 in &ix {
                        for &b2 in &ix {
                            kernels.push(ComponentKernel::Two { alpha: a, beta: b, alpha2: r, beta2: nu, gamma: a2, gamma2: b2 });
                        }
                    }
                }
            }
        }
    }
    let mut worst = 0.0f64;
    for k in kernels {
        let mut acc = 0.0;
        for z in &nodes {
            acc += k.value(*z)?;
        }
        worst = worst.max((acc / nodes.len() as f64).abs());
    }
    Ok(worst)
}

fn sio_probes() -> SuiteOutput {
    let constants = probe_constants(&PROBE_GRIDS)?;
    let mut table = vec!["grid  C(first)  C(second)".to_string()];
    table.extend(PROBE_GRIDS.iter().zip(&constants).map(|(n, c)| format!("{n}  {:.5e}  {:.5e}", c[0], c[1])));
    let first: Vec<f64> = constants.iter().map(|c| c[0]).collect();
    let second: Vec<f64> = constants.iter().map(|c| c[1]).collect();
    Ok((
        vec![
            Check::at_most("first order constant spread", relative_spread(&first), PROBE_SPREAD),
            Check::at_most("second order constant spread", relative_spread(&second), PROBE_SPREAD),
            Check::at_most("component kernel circle averages", component_circle_average()?, CIRCLE_AVERAGE_TOL),
        ],
        table,
    ))
}

fn osgood() -> SuiteOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checks = vec![Check::at_most("M(e^-e) = 1", (osgood_m((-E).exp())? - 1.0).abs(), OSGOOD_TOL)];
    let mut inverse = 0.0f64;
    for _ in 0..100 {
        let x = rng.gen_range(1e-6..(1.0 / E));
        inverse = inverse.max((osgood_minv(osgood_m(x)?)? / x - 1.0).abs());
        let y = rng.gen_range(0.0..3.0);
        inverse = inverse.max((osgood_m(osgood_minv(y)?)? - y).abs());
    }
    checks.push(Check::at_most("M and M^-1 inverse", inverse, OSGOOD_TOL));
    let mut residual = 0.0f64;
    for _ in 0..200 {
        let s = epsilon_schedule(rng.gen_range(1e-6..0.3), rng.gen_range(16..1_000_000), rng.gen_range(0.0..5.0))?;
        residual = residual.max((s.eps2 * (1.0 / s.eps2).ln() - s.eps3 * s.eps3).abs());
    }
    checks.push(Check::at_most("epsilon schedule residual", residual, OSGOOD_TOL));

    let base = EnvelopeParams { xi_inf: 1.5, sigma_grad: 0.4, c: 0.8, f0: 1e-3, n: 1 << 12, t: 0.3 };
    let in_n: Vec<f64> = (4..30).map(|k| envelope_value(&EnvelopeParams { n: 1 << k, ..base })).collect();
    checks.push(Check::holds("envelope nonincreasing in N", in_n.windows(2).all(|w| w[1] <= w[0])));
    let grid: Vec<f64> = (0..50).map(|i| 1.0 + 0.05 * i as f64).collect();
    let scans: [(&str, fn(EnvelopeParams, f64) -> EnvelopeParams); 4] = [
        ("f0", |p, s| EnvelopeParams { f0: p.f0 * s, ..p }),
        ("t", |p, s| EnvelopeParams { t: p.t * s, ..p }),
        ("xi_inf", |p, s| EnvelopeParams { xi_inf: p.xi_inf * s, ..p }),
        ("sigma_grad", |p, s| EnvelopeParams { sigma_grad: p.sigma_grad * s, ..p }),
    ];
    for (name, raise) in scans {
        let vals: Vec<f64> = grid.iter().map(|&s| envelope_value(&raise(base, s))).collect();
        checks.push(Check::holds(format!("envelope nondecreasing in {name}"), vals.windows(2).all(|w| w[1] >= w[0])));
    }
    let flags: Vec<bool> = (0..2000).map(|i| admissible(&EnvelopeParams { t: i as f64 * 0.05, ..base })).collect();
    checks.push(Check::holds("admissibility flips once in t", flags.windows(2).filter(|w| w[0] != w[1]).count() == 1));
    Ok((checks, vec![]))
}

/// Relative drifts of `L¹`, `L²`, `L^∞` over `T = 1` at `n = 256` with transport noise.
pub fn conservation_drifts() -> Result<[f64; 3]> {
    let grid = InitialProfile::SmoothedDisc { radius: 0.8, edge: 0.15, center: [0.0, 0.0] }.grid(4.0, 256)?;
    let noise = NoiseModel::new(vec![
        NoiseMode::fourier(0.3, vec2(1.0, 0.0), 0.0)?,
        NoiseMode::fourier(0.3, vec2(0.0, 1.0), 0.5)?,
        NoiseMode::fourier(0.2, vec2(1.0, 1.0), 1.0)?,
        NoiseMode::fourier(0.2, vec2(1.0, -1.0), 2.0)?,
    ]);
    let steps = (1.0 / (0.5 * cfl_limit(&grid))).ceil() as u64;
    let dt = 1.0 / steps as f64;
    let path = BrownianPath::new(2024, dt)?;
    let mut g: VorticityGrid = grid.clone();
    for n in 0..steps {
        g = euler_pde::step(&g, &noise, &path, n, dt)?;
    }
    let drift = |p: Lp| (lp_norm(&g, p) / lp_norm(&grid, p) - 1.0).abs();
    Ok([drift(Lp::L1), drift(Lp::L2), drift(Lp::Inf)])
}

fn pde_conservation() -> SuiteOutput {
    let d = conservation_drifts()?;
    Ok((
        vec![
            Check::at_most("L1 drift", d[0], CONSERVATION_TOL),
            Check::at_most("L2 drift", d[1], CONSERVATION_TOL),
            Check::at_most("Linf drift", d[2], CONSERVATION_TOL),
        ],
        vec![],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_an_error() {
        assert!(matches!(verify("nope"), Err(HarnessError::UnknownSuite(_))));
    }

    #[test]
    fn osgood_suite_passes() {
        let r = verify("osgood").unwrap();
        assert!(r.passed(), "{:?}", r.first_failure());
    }

    #[test]
    fn spread_of_equal_values_is_zero() {
        assert_eq!(relative_spread(&[2.0, 2.0, 2.0]), 0.0);
        assert!((relative_spread(&[1.0, 2.0, 3.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nan_never_passes() {
        assert!(!Check::at_most("x", f64::NAN, 1.0).passed);
    }
}
