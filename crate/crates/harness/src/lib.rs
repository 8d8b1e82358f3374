//! Orchestration for coupled particle/field experiments: configuration,
//! ensembles of realizations sharing keyed Brownian paths, N-sweeps, the
//! Itô-identity check and the verification suites behind the `vortexmf` CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod io;
pub mod ito;
pub mod run;
pub mod sweep;
pub mod verify;

pub use config::{ExperimentConfig, Mode};
pub use error::{HarnessError, Result};
pub use run::{run_coupled, RunRecord};

/// Caps the global rayon pool at `VORTEXMF_THREADS` workers when set.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("VORTEXMF_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| HarnessError::Config(format!("VORTEXMF_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| HarnessError::Config(e.to_string()))
}
