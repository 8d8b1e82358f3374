//! Experiment configuration, validation and hashing.

use crate::error::{HarnessError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use vortexmf_core::euler_pde::{InitialProfile, Sampling, VorticityGrid};
use vortexmf_core::noise::{NoiseMode, NoiseModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Particles and field driven by one Brownian path.
    Coupled,
    /// Particles move, the field stays at `ξ⁰`.
    ParticlesOnly,
    /// The field moves, the particles stay at their initial positions.
    PdeOnly,
    /// Particles with independent additive noise `√(2ν) dW̃ⁱ`, field without noise.
    AdditiveNoise,
    /// Runs every verification suite.
    Verify,
}

fn default_sampling() -> Sampling {
    Sampling::Stratified
}

fn default_particle_cfl() -> f64 {
    0.1
}

fn default_sobolev() -> f64 {
    -2.0
}

fn default_envelope_c() -> f64 {
    1.0
}

fn default_ito_deltas() -> Vec<f64> {
    vec![4e-3, 2e-3, 1e-3]
}

/// All keys are snake_case in JSON. `box_l` is the half side: the box is `[−L, L)²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_list: Vec<usize>,
    pub grid_n: usize,
    pub box_l: f64,
    pub t_horizon: f64,
    pub dt_max: f64,
    /// Field step as a fraction of the CFL limit `h / max|u|`.
    pub c_cfl: f64,
    #[serde(default)]
    pub noise: Vec<NoiseMode>,
    pub initial: InitialProfile,
    pub realizations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Time between diagnostics.
    pub cadence: f64,
    pub mode: Mode,
    #[serde(default = "default_sampling")]
    pub sampling: Sampling,
    /// Particle substeps keep `dt ≤ particle_c_cfl · d_min / V_max`.
    #[serde(default = "default_particle_cfl")]
    pub particle_c_cfl: f64,
    /// `ν` of the additive-noise mode.
    #[serde(default)]
    pub viscosity: f64,
    #[serde(default = "default_sobolev")]
    pub sobolev_s: f64,
    /// Calibration constant `C` of the envelope.
    #[serde(default = "default_envelope_c")]
    pub envelope_c: f64,
    #[serde(default = "default_ito_deltas")]
    pub ito_deltas: Vec<f64>,
    /// Write `grid_####.bin` frames of realization 0.
    #[serde(default)]
    pub write_frames: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel::new(self.noise.clone())
    }

    pub fn initial_grid(&self) -> Result<VorticityGrid> {
        Ok(self.initial.grid(self.box_l, self.grid_n)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        let positive = [
            ("box_l", self.box_l),
            ("t_horizon", self.t_horizon),
            ("dt_max", self.dt_max),
            ("c_cfl", self.c_cfl),
            ("cadence", self.cadence),
            ("particle_c_cfl", self.particle_c_cfl),
            ("envelope_c", self.envelope_c),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.viscosity >= 0.0) || !self.viscosity.is_finite() {
            return bad(format!("viscosity must be nonnegative, got {}", self.viscosity));
        }
        if self.mode == Mode::AdditiveNoise && self.viscosity == 0.0 {
            return bad("additive-noise mode needs a positive viscosity".into());
        }
        if self.n_list.is_empty() || self.n_list.iter().any(|&n| n < 2) {
            return bad("n_list must hold particle counts of at least 2".into());
        }
        if self.grid_n < 8 || !self.grid_n.is_multiple_of(2) {
            return bad(format!("grid_n must be even and at least 8, got {}", self.grid_n));
        }
        if self.realizations == 0 {
            return bad("realizations must be positive".into());
        }
        if !(self.sobolev_s < -1.0) {
            return bad(format!("sobolev_s must be below −1, got {}", self.sobolev_s));
        }
        if self.ito_deltas.iter().any(|d| !(*d > 0.0)) {
            return bad("ito_deltas must be positive".into());
        }
        let samples = self.t_horizon / self.cadence;
        if (samples - samples.round()).abs() > 1e-9 * samples.max(1.0) {
            return bad(format!("t_horizon {} is not a multiple of cadence {}", self.t_horizon, self.cadence));
        }
        let grid = self.initial_grid()?;
        if (grid.mass() - 1.0).abs() > 1e-8 {
            return bad(format!("initial datum has mass {} on its grid", grid.mass()));
        }
        grid.check_support()?;
        Ok(())
    }

    /// Diagnostic samples after `t = 0`.
    pub fn sample_count(&self) -> u64 {
        (self.t_horizon / self.cadence).round() as u64
    }

    /// SHA-256 of the canonical JSON with the output directory removed.
    pub fn hash(&self) -> String {
        let mut bare = self.clone();
        bare.out_dir = None;
        let json = serde_json::to_vec(&bare).expect("configs always serialize");
        format!("{:x}", Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "seed": 7, "n_list": [64], "grid_n": 64, "box_l": 2.5, "t_horizon": 0.25,
                "dt_max": 0.01, "c_cfl": 0.5, "cadence": 0.05, "realizations": 4, "mode": "coupled",
                "noise": [{"kind": "fourier", "c": 0.3, "kx": 1.0, "ky": 0.0, "theta": 0.0}],
                "initial": {"kind": "smoothed-disc", "radius": 0.5, "edge": 0.15}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn parses_with_defaults() {
        let c = sample();
        assert_eq!(c.sampling, Sampling::Stratified);
        assert_eq!(c.sample_count(), 5);
        assert_eq!(c.noise_model().count(), 1);
    }

    #[test]
    fn output_directory_does_not_change_the_hash() {
        let a = sample();
        let mut b = a.clone();
        b.out_dir = Some("/tmp/elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed += 1;
        assert_ne!(a.hash(), c.hash());
        let mut d = a.clone();
        d.noise[0] = NoiseMode::fourier(0.31, vortexmf_core::vec2(1.0, 0.0), 0.0).unwrap();
        assert_ne!(a.hash(), d.hash());
    }

    #[test]
    fn rejects_bad_fields() {
        let mut c = sample();
        c.dt_max = 0.0;
        assert!(c.validate().is_err());
        let mut c = sample();
        c.cadence = 0.07;
        assert!(c.validate().is_err());
        let mut c = sample();
        c.box_l = 0.6;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_json(r#"{"seed": 1, "bogus": 2}"#).is_err());
    }
}
