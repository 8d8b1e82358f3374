use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("singular input: {0}")]
    Singular(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("index {index} out of range ({len} entries)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("coincident vortices {i} and {j}")]
    CoincidentPair { i: usize, j: usize },
    #[error("collision at t = {t}: vortices {i} and {j} at distance {dist:e}")]
    Collision { t: f64, i: usize, j: usize, dist: f64 },
    #[error("CFL violation: dt = {dt} exceeds the bound {bound}")]
    Cfl { dt: f64, bound: f64 },
    #[error("support too close to the box edge: mass fraction {mass_fraction:e} outside the core")]
    Support { mass_fraction: f64 },
    #[error("tracer {index} left the box core")]
    TracerEscaped { index: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("inadmissible envelope parameters: {0}")]
    Inadmissible(String),
    #[error("series left (0, 1/e) at t = {t}")]
    SeriesExit { t: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
