//! Coupled particle/field realizations and their ensemble statistics.

use crate::config::{ExperimentConfig, Mode};
use crate::error::{HarnessError, Result};
use crate::io;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use vortexmf_core::bounds::{admissible, default_regularization, envelope_value, epsilon_schedule, regularizer};
use vortexmf_core::bounds::{EnvelopeParams, MaximalSeries};
use vortexmf_core::euler_pde::{self, cfl_limit, lp_norm, sample_ensemble, Lp, VorticityGrid};
use vortexmf_core::modulated_energy::{close_pairs, modulated_energy, sobolev_distance, EnergyReport};
use vortexmf_core::noise::{BrownianPath, NoiseModel};
use vortexmf_core::vortex_sde::{self, DtController, VortexEnsemble};

/// ChaCha stream used for initial sampling, disjoint from the noise streams of the same key.
const SAMPLING_STREAM: u64 = 1 << 61;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub index: usize,
    /// Seed of the Brownian path keyed by `(seed, index)`.
    pub path_seed: u64,
    pub series: Vec<EnergyReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStats {
    pub t: f64,
    pub mean_abs: f64,
    pub stderr_abs: Option<f64>,
    /// Mean of `⟨F_avg⟩_ε` with `ε = ln N / N`.
    pub mean_reg: f64,
    pub stderr_reg: Option<f64>,
    pub mean_hs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopePoint {
    pub t: f64,
    /// Running maximum of the mean regularized energy.
    pub g_hat: f64,
    pub envelope: f64,
    pub admissible: bool,
}

/// Ensemble for one particle count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRun {
    pub n: usize,
    pub dt: f64,
    pub steps_per_sample: u64,
    pub xi_inf: f64,
    pub sigma_grad: f64,
    pub realizations: Vec<RealizationRecord>,
    pub excluded: usize,
    pub stats: Vec<TimeStats>,
    pub envelope: Vec<EnvelopePoint>,
    /// More than 5% of the realizations were excluded.
    pub failed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub mode: Mode,
    pub seed: u64,
    pub runs: Vec<EnsembleRun>,
    pub wall_clock_s: f64,
}

impl RunRecord {
    /// Equality of everything except the wall-clock time.
    pub fn same_results(&self, other: &Self) -> bool {
        self.config_hash == other.config_hash && self.mode == other.mode && self.seed == other.seed && self.runs == other.runs
    }

    pub fn failed(&self) -> bool {
        self.runs.iter().any(|r| r.failed)
    }
}

/// Base step `min(dt_max, c_cfl · cfl_limit(ξ⁰))`, shortened so that a whole number of steps fits in one cadence.
pub fn base_step(cfg: &ExperimentConfig, grid0: &VorticityGrid) -> (f64, u64) {
    let target = cfg.dt_max.min(cfg.c_cfl * cfl_limit(grid0));
    let per = (cfg.cadence / target * (1.0 - 1e-12)).ceil().max(1.0) as u64;
    (cfg.cadence / per as f64, per)
}

struct Setup<'a> {
    cfg: &'a ExperimentConfig,
    n: usize,
    grid0: &'a VorticityGrid,
    noise: NoiseModel,
    dt: f64,
    per: u64,
    xi_inf: f64,
}

impl Setup<'_> {
    fn report(&self, ens: &VortexEnsemble, grid: &VorticityGrid, t: f64) -> vortexmf_core::Result<EnergyReport> {
        let mut e = modulated_energy(ens, grid)?;
        e.t = t;
        let eps = default_regularization(self.n as u64);
        if let Ok(s) = epsilon_schedule(regularizer(e.f_avg, eps), self.n as u64, self.xi_inf) {
            e.close_pairs = Some(close_pairs(ens, s.eps3)?);
        }
        e.hs_distance = Some(sobolev_distance(ens, grid, self.cfg.sobolev_s)?);
        Ok(e)
    }

    fn particles(&self, ens0: &VortexEnsemble, path: &BrownianPath) -> vortexmf_core::Result<Vec<VortexEnsemble>> {
        let samples = self.cfg.sample_count();
        let controller = DtController { dt_max: self.dt, c_cfl: self.cfg.particle_c_cfl };
        let steps = samples * self.per;
        Ok(match self.cfg.mode {
            Mode::Coupled | Mode::ParticlesOnly | Mode::Verify => {
                vortex_sde::run(ens0, &self.noise, path, steps, &controller, self.per)?.frames
            }
            Mode::AdditiveNoise => {
                vortex_sde::run_additive(ens0, self.cfg.viscosity, path, steps, &controller, self.per)?.frames
            }
            Mode::PdeOnly => vec![ens0.clone(); samples as usize + 1],
        })
    }

    /// Runs one realization; field frames are returned when `keep_frames` is set.
    fn realization(&self, index: usize, keep_frames: bool) -> (RealizationRecord, Vec<VorticityGrid>) {
        let path = BrownianPath::for_realization(self.cfg.seed, index as u64, self.dt).expect("validated step");
        let mut record = RealizationRecord { index, path_seed: path.seed(), series: Vec::new(), error: None };
        let mut frames = Vec::new();
        if let Err(e) = self.fill(&path, &mut record, keep_frames.then_some(&mut frames)) {
            record.error = Some(e.to_string());
        }
        (record, frames)
    }

    fn fill(
        &self,
        path: &BrownianPath,
        record: &mut RealizationRecord,
        mut frames: Option<&mut Vec<VorticityGrid>>,
    ) -> vortexmf_core::Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(path.seed());
        rng.set_stream(SAMPLING_STREAM);
        let ens0 = sample_ensemble(self.grid0, self.n, self.cfg.sampling, &mut rng)?;
        let particles = self.particles(&ens0, path)?;
        let field_noise = match self.cfg.mode {
            Mode::AdditiveNoise => NoiseModel::none(),
            _ => self.noise.clone(),
        };
        let moving_field = self.cfg.mode != Mode::ParticlesOnly;
        let mut grid = self.grid0.clone();
        for (j, ens) in particles.iter().enumerate() {
            if j > 0 && moving_field {
                for step in (j as u64 - 1) * self.per..j as u64 * self.per {
                    grid = euler_pde::step(&grid, &field_noise, path, step, self.dt)?;
                }
            }
            let t = j as f64 * self.cfg.cadence;
            if let Some(f) = frames.as_deref_mut() {
                f.push(VorticityGrid { time: t, ..grid.clone() });
            }
            record.series.push(self.report(ens, &grid, t)?);
        }
        Ok(())
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, Option<f64>) {
    let r = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / r;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0);
    (mean, Some((var / r).sqrt()))
}

fn ensemble_stats(n: usize, realizations: &[RealizationRecord], samples: usize, cadence: f64) -> Vec<TimeStats> {
    let ok: Vec<&RealizationRecord> = realizations.iter().filter(|r| r.error.is_none()).collect();
    if ok.is_empty() {
        return Vec::new();
    }
    let eps = default_regularization(n as u64);
    (0..samples)
        .map(|j| {
            let f: Vec<f64> = ok.iter().map(|r| r.series[j].f_avg).collect();
            let (mean_abs, stderr_abs) = mean_and_stderr(&f.iter().map(|x| x.abs()).collect::<Vec<_>>());
            let (mean_reg, stderr_reg) = mean_and_stderr(&f.iter().map(|x| regularizer(*x, eps)).collect::<Vec<_>>());
            let hs: Option<Vec<f64>> = ok.iter().map(|r| r.series[j].hs_distance).collect();
            TimeStats {
                t: j as f64 * cadence,
                mean_abs,
                stderr_abs,
                mean_reg,
                stderr_reg,
                mean_hs: hs.map(|h| mean_and_stderr(&h).0),
            }
        })
        .collect()
}

/// Envelope parameters for particle count `n` at time `t`.
pub fn envelope_params(run: &EnsembleRun, c: f64, t: f64) -> EnvelopeParams {
    EnvelopeParams {
        xi_inf: run.xi_inf,
        sigma_grad: run.sigma_grad,
        c,
        f0: run.stats.first().map_or(0.0, |s| s.mean_abs),
        n: run.n as u64,
        t,
    }
}

fn envelope_series(run: &EnsembleRun, c: f64) -> Vec<EnvelopePoint> {
    if run.stats.is_empty() {
        return Vec::new();
    }
    let times: Vec<f64> = run.stats.iter().map(|s| s.t).collect();
    let means: Vec<f64> = run.stats.iter().map(|s| s.mean_reg).collect();
    let series = MaximalSeries::from_samples(times.clone(), &means).expect("sample times increase");
    times
        .iter()
        .zip(series.values)
        .map(|(&t, g_hat)| {
            let p = envelope_params(run, c, t);
            EnvelopePoint { t, g_hat, envelope: envelope_value(&p), admissible: admissible(&p) }
        })
        .collect()
}

/// Every realization of one particle count, run concurrently.
pub fn run_ensemble(cfg: &ExperimentConfig, n: usize) -> Result<(EnsembleRun, Vec<VorticityGrid>)> {
    let grid0 = cfg.initial_grid()?;
    let noise = cfg.noise_model();
    let (dt, per) = base_step(cfg, &grid0);
    let setup = Setup { cfg, n, grid0: &grid0, noise: noise.clone(), dt, per, xi_inf: lp_norm(&grid0, Lp::Inf) };
    let outcomes: Vec<(RealizationRecord, Vec<VorticityGrid>)> = (0..cfg.realizations)
        .into_par_iter()
        .map(|r| setup.realization(r, cfg.write_frames && r == 0))
        .collect();
    let mut frames = Vec::new();
    let mut realizations = Vec::with_capacity(outcomes.len());
    for (rec, f) in outcomes {
        if rec.index == 0 {
            frames = f;
        }
        realizations.push(rec);
    }
    let excluded = realizations.iter().filter(|r| r.error.is_some()).count();
    let samples = cfg.sample_count() as usize + 1;
    let mut run = EnsembleRun {
        n,
        dt,
        steps_per_sample: per,
        xi_inf: setup.xi_inf,
        sigma_grad: noise.norms().1.powi(2),
        stats: ensemble_stats(n, &realizations, samples, cfg.cadence),
        realizations,
        excluded,
        envelope: Vec::new(),
        failed: excluded * 20 > cfg.realizations,
    };
    run.envelope = envelope_series(&run, cfg.envelope_c);
    Ok((run, frames))
}

/// Runs every particle count of the config; writes outputs when `out_dir` is set.
pub fn run_coupled(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    if cfg.mode == Mode::Verify {
        return Err(HarnessError::Config("mode \"verify\" is handled by the verify command".into()));
    }
    let start = Instant::now();
    let mut runs = Vec::with_capacity(cfg.n_list.len());
    let mut first_frames = Vec::new();
    for (k, &n) in cfg.n_list.iter().enumerate() {
        let (run, frames) = run_ensemble(cfg, n)?;
        if k == 0 {
            first_frames = frames;
        }
        runs.push(run);
    }
    let record = RunRecord {
        config_hash: cfg.hash(),
        mode: cfg.mode,
        seed: cfg.seed,
        runs,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = &cfg.out_dir {
        io::write_json(&dir.join("record.json"), &record)?;
        io::write_energy_csv(&dir.join("energy.csv"), &record)?;
        for (j, g) in first_frames.iter().enumerate() {
            io::write_atomic(&dir.join(format!("grid_{j:04}.bin")), &io::grid_frame_bytes(g))?;
        }
    }
    Ok(record)
}
