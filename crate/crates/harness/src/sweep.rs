//! Convergence table over the particle counts of a config.

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::io;
use crate::run::{envelope_params, run_coupled, RunRecord};
use serde::{Deserialize, Serialize};
use vortexmf_core::bounds::{admissible, envelope_value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub t: f64,
    /// `Ê⟨F_avg⟩_{ln N/N}`
    pub e_reg: f64,
    pub e_reg_stderr: Option<f64>,
    pub hs: Option<f64>,
    /// Ensemble-mean `|F_avg(0)|`.
    pub f0: f64,
    pub xi_inf: f64,
    pub sigma_grad: f64,
    pub c: f64,
    pub envelope: f64,
    pub admissible: bool,
    pub excluded: usize,
}

impl SweepRow {
    /// `hs / ((Ê⟨F⟩)^{1/2} + N^{−1/2} (ln N)^{1/2})`.
    pub fn sobolev_ratio(&self) -> Option<f64> {
        let n = self.n as f64;
        self.hs.map(|h| h / (self.e_reg.sqrt() + (n.ln() / n).sqrt()))
    }
}

pub fn sweep_rows(record: &RunRecord, c: f64) -> Vec<SweepRow> {
    record
        .runs
        .iter()
        .flat_map(|run| {
            run.stats.iter().map(move |s| {
                let p = envelope_params(run, c, s.t);
                SweepRow {
                    n: run.n,
                    t: s.t,
                    e_reg: s.mean_reg,
                    e_reg_stderr: s.stderr_reg,
                    hs: s.mean_hs,
                    f0: p.f0,
                    xi_inf: p.xi_inf,
                    sigma_grad: p.sigma_grad,
                    c,
                    envelope: envelope_value(&p),
                    admissible: admissible(&p),
                    excluded: run.excluded,
                }
            })
        })
        .collect()
}

/// Runs the config and tabulates it; writes `sweep.csv` next to the run outputs.
pub fn sweep(cfg: &ExperimentConfig) -> Result<(RunRecord, Vec<SweepRow>)> {
    let record = run_coupled(cfg)?;
    let rows = sweep_rows(&record, cfg.envelope_c);
    if let Some(dir) = &cfg.out_dir {
        io::write_sweep_csv(&dir.join("sweep.csv"), &rows)?;
    }
    Ok((record, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use vortexmf_core::bounds::EnvelopeParams;

    #[test]
    fn envelope_column_recomputes_from_the_row() {
        let cfg = ExperimentConfig::from_json(
            r#"{
                "seed": 3, "n_list": [16, 32], "grid_n": 64, "box_l": 2.5, "t_horizon": 0.1,
                "dt_max": 0.02, "c_cfl": 0.5, "cadence": 0.05, "realizations": 2, "mode": "coupled",
                "noise": [{"kind": "fourier", "c": 0.2, "kx": 0.0, "ky": 1.0, "theta": 0.3}],
                "initial": {"kind": "smoothed-disc", "radius": 0.5, "edge": 0.2}
            }"#,
        )
        .unwrap();
        let (_, rows) = sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 6);
        for r in &rows {
            let p = EnvelopeParams { xi_inf: r.xi_inf, sigma_grad: r.sigma_grad, c: r.c, f0: r.f0, n: r.n as u64, t: r.t };
            assert_eq!(r.envelope, envelope_value(&p));
            assert_eq!(r.admissible, admissible(&p));
        }
        assert!(rows.iter().filter(|r| r.t == 0.0).all(|r| (r.envelope - r.f0).abs() < 1e-15));
    }
}
