//! Transport-noise fields σ_k and the keyed Brownian driver shared by the
//! particle and grid solvers.

use crate::error::{Error, Result};
use crate::geometry::{perp, Mat2, Vec2};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One noise field: a constant vector `c·d` or a shear wave `c (k⊥/|k|) cos(k·x + θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModeRecord", into = "ModeRecord")]
pub enum NoiseMode {
    Constant { c: f64, direction: Vec2 },
    Fourier { c: f64, k: Vec2, theta: f64 },
}

/// Flat serialized form of a [`NoiseMode`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModeRecord {
    pub kind: String,
    #[serde(default)]
    pub c: f64,
    #[serde(default)]
    pub kx: f64,
    #[serde(default)]
    pub ky: f64,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub dx: f64,
    #[serde(default)]
    pub dy: f64,
}

impl TryFrom<ModeRecord> for NoiseMode {
    type Error = Error;

    fn try_from(r: ModeRecord) -> Result<Self> {
        match r.kind.as_str() {
            "constant" => NoiseMode::constant(r.c, Vec2::new(r.dx, r.dy)),
            "fourier" => NoiseMode::fourier(r.c, Vec2::new(r.kx, r.ky), r.theta),
            other => Err(Error::InvalidArgument(format!("unknown noise mode kind {other:?}"))),
        }
    }
}

impl From<NoiseMode> for ModeRecord {
    fn from(m: NoiseMode) -> Self {
        match m {
            NoiseMode::Constant { c, direction } => {
                ModeRecord { kind: "constant".into(), c, dx: direction.x, dy: direction.y, ..Default::default() }
            }
            NoiseMode::Fourier { c, k, theta } => {
                ModeRecord { kind: "fourier".into(), c, kx: k.x, ky: k.y, theta, ..Default::default() }
            }
        }
    }
}

impl NoiseMode {
    /// Constant field; `direction` is normalized.
    pub fn constant(c: f64, direction: Vec2) -> Result<Self> {
        let len = direction.norm();
        if !c.is_finite() || !(len > 0.0) || !len.is_finite() {
            return Err(Error::InvalidArgument("constant mode needs finite c and nonzero direction".into()));
        }
        Ok(NoiseMode::Constant { c, direction: direction / len })
    }

    pub fn fourier(c: f64, k: Vec2, theta: f64) -> Result<Self> {
        if !c.is_finite() || !theta.is_finite() || !(k.norm() > 0.0) || !k.norm().is_finite() {
            return Err(Error::InvalidArgument("fourier mode needs finite c, θ and nonzero k".into()));
        }
        Ok(NoiseMode::Fourier { c, k, theta })
    }

    #[inline]
    pub fn value(&self, x: Vec2) -> Vec2 {
        match *self {
            NoiseMode::Constant { c, direction } => c * direction,
            NoiseMode::Fourier { c, k, theta } => {
                let p = perp(k) / k.norm();
                c * (k.dot(&x) + theta).cos() * p
            }
        }
    }

    /// Jacobian `J[(i, j)] = ∂_j σ^i`.
    #[inline]
    pub fn jacobian(&self, x: Vec2) -> Mat2 {
        match *self {
            NoiseMode::Constant { .. } => Mat2::zeros(),
            NoiseMode::Fourier { c, k, theta } => {
                let p = perp(k) / k.norm();
                -c * (k.dot(&x) + theta).sin() * p * k.transpose()
            }
        }
    }

    /// `(‖σ‖_∞, ‖∇σ‖_∞)`.
    pub fn sup_norms(&self) -> (f64, f64) {
        match *self {
            NoiseMode::Constant { c, .. } => (c.abs(), 0.0),
            NoiseMode::Fourier { c, k, .. } => (c.abs(), c.abs() * k.norm()),
        }
    }
}

/// Finite family of divergence-free noise fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NoiseModel {
    modes: Vec<NoiseMode>,
}

impl NoiseModel {
    pub fn new(modes: Vec<NoiseMode>) -> Self {
        Self { modes }
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn modes(&self) -> &[NoiseMode] {
        &self.modes
    }

    pub fn count(&self) -> usize {
        self.modes.len()
    }

    fn mode(&self, k: usize) -> Result<&NoiseMode> {
        self.modes.get(k).ok_or(Error::IndexOutOfRange { index: k, len: self.modes.len() })
    }

    pub fn sigma_eval(&self, k: usize, x: Vec2) -> Result<Vec2> {
        Ok(self.mode(k)?.value(x))
    }

    pub fn grad_sigma_eval(&self, k: usize, x: Vec2) -> Result<Mat2> {
        Ok(self.mode(k)?.jacobian(x))
    }

    /// `½ Σ_k (σ_k·∇)σ_k(x)`.
    pub fn ito_correction(&self, x: Vec2) -> Vec2 {
        self.modes.iter().map(|m| m.jacobian(x) * m.value(x)).sum::<Vec2>() * 0.5
    }

    /// `((Σ_k ‖σ_k‖²_∞)^{1/2}, (Σ_k ‖∇σ_k‖²_∞)^{1/2})`.
    pub fn norms(&self) -> (f64, f64) {
        let (a, b) = self.modes.iter().map(|m| m.sup_norms()).fold((0.0, 0.0), |acc, (s, g)| {
            (acc.0 + s * s, acc.1 + g * g)
        });
        (a.sqrt(), b.sqrt())
    }

    /// `Σ_k σ_k(x) ΔW^k`.
    #[inline]
    pub fn displacement(&self, x: Vec2, dw: &[f64]) -> Vec2 {
        self.modes.iter().zip(dw).map(|(m, w)| *w * m.value(x)).sum()
    }

    pub fn is_constant_only(&self) -> bool {
        self.modes.iter().all(|m| matches!(m, NoiseMode::Constant { .. }))
    }
}

/// Stream offset for the per-vortex increments of the additive-noise system.
const ADDITIVE_STREAM_BASE: u64 = 1 << 62;

/// Reproducible Brownian increments: every value is a pure function of
/// `(seed, stream, step, refinement node)`.
#[derive(Debug, Clone)]
pub struct BrownianPath {
    seed: u64,
    dt: f64,
    key: [u8; 32],
}

impl BrownianPath {
    pub fn new(seed: u64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("path step must be positive, got {dt}")));
        }
        let key = ChaCha8Rng::seed_from_u64(seed).get_seed();
        Ok(Self { seed, dt, key })
    }

    /// Path of realization `r` of an ensemble seeded by `seed`.
    pub fn for_realization(seed: u64, realization: u64, dt: f64) -> Result<Self> {
        Self::new(realization_seed(seed, realization), dt)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn standard_normal(&self, stream: u64, step: u64, node: u64) -> f64 {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(stream);
        rng.set_word_pos((((step as u128) << 40) | node as u128) * 4);
        let a = rng.next_u64();
        let b = rng.next_u64();
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// `ΔW^k` over step `n`, distributed N(0, dt).
    pub fn increment(&self, k: usize, n: u64) -> f64 {
        self.dt.sqrt() * self.standard_normal(k as u64, n, 0)
    }

    /// Increments of all `modes` over step `n`.
    pub fn increments(&self, modes: usize, n: u64) -> Vec<f64> {
        (0..modes).map(|k| self.increment(k, n)).collect()
    }

    pub fn increments_range(&self, k: usize, steps: std::ops::Range<u64>) -> Vec<f64> {
        steps.map(|n| self.increment(k, n)).collect()
    }

    /// Split step `n` of stream `k` into `2^level` sub-increments by Lévy
    /// midpoint refinement; they sum to [`Self::increment`] up to rounding.
    pub fn refined_increments(&self, k: usize, n: u64, level: u32) -> Vec<f64> {
        self.refine(k as u64, n, level, self.increment(k, n))
    }

    fn refine(&self, stream: u64, n: u64, level: u32, total: f64) -> Vec<f64> {
        let mut parts = vec![total];
        let mut tau = self.dt;
        for l in 0..level {
            let mut next = Vec::with_capacity(parts.len() * 2);
            for (j, s) in parts.iter().enumerate() {
                let node = (1u64 << l) + j as u64;
                let left = 0.5 * s + 0.5 * tau.sqrt() * self.standard_normal(stream, n, node);
                next.push(left);
                next.push(s - left);
            }
            parts = next;
            tau *= 0.5;
        }
        parts
    }

    /// Independent 2D increment of vortex `i` over step `n` (additive-noise system).
    pub fn vortex_increment(&self, i: usize, n: u64) -> Vec2 {
        let s = ADDITIVE_STREAM_BASE + 2 * i as u64;
        self.dt.sqrt() * Vec2::new(self.standard_normal(s, n, 0), self.standard_normal(s + 1, n, 0))
    }

    pub fn refined_vortex_increments(&self, i: usize, n: u64, level: u32) -> Vec<Vec2> {
        let s = ADDITIVE_STREAM_BASE + 2 * i as u64;
        let base = self.vortex_increment(i, n);
        let xs = self.refine(s, n, level, base.x);
        let ys = self.refine(s + 1, n, level, base.y);
        xs.into_iter().zip(ys).map(|(x, y)| Vec2::new(x, y)).collect()
    }
}

/// Seed of realization `r`, derived from the ensemble seed.
pub fn realization_seed(seed: u64, realization: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(realization);
    rng.next_u64()
}
