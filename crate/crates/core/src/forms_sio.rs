//! Commutator forms and the singular integral operators behind them.
//!
//! For a vector field `v` the kernels
//!
//! `K₁,ᵥ(x, y) = ∇g(x − y)·(v(x) − v(y))`,
//! `K₂,ᵥ(x, y) = ∇²g(x − y) : (v(x) − v(y))^{⊗2}`
//!
//! define bilinear forms on signed measures off the diagonal, and operators
//! `T_{j,v} f(x) = ∫ K_{j,v}(x, y) f(y) dy` whose sandwiches `∂_α T ∂_β`
//! are bounded on L² with norm `≲ ‖∇v‖^j_∞`.
//!
//! Grid densities are discretized by nodal point masses `ρ_c h²`; the
//! cell–cell part of a form is a zero-padded FFT convolution with the kernel
//! sampled at lattice offsets, and the self-cell term is the angular limit of
//! the kernel at coincidence. [`SioOperator`] applies `∂_α T ∂_β` with that
//! same lattice operator and skew-adjoint difference operators, so forms and
//! operators are discretely consistent. [`sio_apply_direct`] is an independent route: the
//! principal-value quadrature of `−∂_{x_α}∂_{y_β}K` plus the local terms
//! given by the circle constants of [`BoundaryConstant`].

use crate::error::{Error, Result};
use crate::euler_pde::{biot_savart, VorticityGrid};
use crate::geometry::{vec2, Mat2, Vec2};
use crate::noise::NoiseMode;
use crate::numerics::conv::{cached_kernel, PaddedConvolver};
use crate::numerics::fft::{signed_freq, Fft2};
use crate::numerics::quadrature::{gauss_legendre, integrate_fixed};
use crate::numerics::{ordered_sum, smooth_step, smooth_step_slope};
use crate::vortex_sde::VortexEnsemble;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI};
use std::fmt;
use std::sync::{Arc, OnceLock};

const INV_2PI: f64 = 1.0 / (2.0 * PI);

type Tensor2 = [[f64; 2]; 2];
type Tensor3 = [Tensor2; 2];
type Tensor4 = [Tensor3; 2];

#[inline]
fn kron(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

/// `(∇²g, ∇³g, ∇⁴g)(z)` for `z ≠ 0`.
fn g_derivatives(z: Vec2) -> (Tensor2, Tensor3, Tensor4) {
    let r2 = z.norm_squared();
    let (r4, r6, r8) = (r2 * r2, r2 * r2 * r2, r2 * r2 * r2 * r2);
    let p = [z.x, z.y];
    let c = -INV_2PI;
    let mut h = [[0.0; 2]; 2];
    let mut t = [[[0.0; 2]; 2]; 2];
    let mut q = [[[[0.0; 2]; 2]; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            h[a][b] = c * (kron(a, b) / r2 - 2.0 * p[a] * p[b] / r4);
            for g in 0..2 {
                t[a][b][g] = c
                    * (-2.0 * (kron(a, b) * p[g] + kron(a, g) * p[b] + kron(b, g) * p[a]) / r4
                        + 8.0 * p[a] * p[b] * p[g] / r6);
                for d in 0..2 {
                    let pairs = kron(a, b) * kron(g, d) + kron(a, g) * kron(b, d) + kron(b, g) * kron(a, d);
                    let mixed = kron(a, b) * p[g] * p[d]
                        + kron(a, g) * p[b] * p[d]
                        + kron(b, g) * p[a] * p[d]
                        + kron(a, d) * p[b] * p[g]
                        + kron(b, d) * p[a] * p[g]
                        + kron(g, d) * p[a] * p[b];
                    q[a][b][g][d] =
                        c * (-2.0 * pairs / r4 + 8.0 * mixed / r6 - 48.0 * p[a] * p[b] * p[g] * p[d] / r8);
                }
            }
        }
    }
    (h, t, q)
}

fn index(i: usize) -> Result<usize> {
    if (1..=2).contains(&i) {
        Ok(i - 1)
    } else {
        Err(Error::InvalidArgument(format!("component index must be 1 or 2, got {i}")))
    }
}

/// Homogeneous degree −2 kernels with vanishing circle averages; indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentKernel {
    /// `K⁽⁰⁾_{αβ}`
    Zero { alpha: usize, beta: usize },
    /// `K⁽¹⁾_{αβρ}^ν`
    One { alpha: usize, beta: usize, rho: usize, nu: usize },
    /// `K⁽²⁾_{αβα'β'}^{γγ'}`
    Two { alpha: usize, beta: usize, alpha2: usize, beta2: usize, gamma: usize, gamma2: usize },
}

impl ComponentKernel {
    pub fn value(&self, z: Vec2) -> Result<f64> {
        let ix = self.indices()?;
        if z.norm_squared() == 0.0 {
            return Err(Error::Singular("component kernel evaluated at the origin".into()));
        }
        let (h, t, q) = g_derivatives(z);
        let p = [z.x, z.y];
        Ok(match *self {
            ComponentKernel::Zero { .. } => h[ix[0]][ix[1]],
            ComponentKernel::One { .. } => t[ix[0]][ix[1]][ix[2]] * p[ix[3]],
            ComponentKernel::Two { .. } => q[ix[0]][ix[1]][ix[2]][ix[3]] * p[ix[4]] * p[ix[5]],
        })
    }

    fn indices(&self) -> Result<Vec<usize>> {
        let raw = match *self {
            ComponentKernel::Zero { alpha, beta } => vec![alpha, beta],
            ComponentKernel::One { alpha, beta, rho, nu } => vec![alpha, beta, rho, nu],
            ComponentKernel::Two { alpha, beta, alpha2, beta2, gamma, gamma2 } => {
                vec![alpha, beta, alpha2, beta2, gamma, gamma2]
            }
        };
        raw.into_iter().map(index).collect()
    }
}

/// Circle integrals produced by moving derivatives through the kernels; indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryConstant {
    /// `C_{βγ} = −(1/2π) ∫_{S¹} z_β z_γ`
    Pair { beta: usize, gamma: usize },
    /// `C^{αρ}_{βγ} = −(1/2π) ∫_{S¹} z_β (δ_{αγ} − 2 z_α z_γ) z_ρ`
    FirstOrder { alpha: usize, rho: usize, beta: usize, gamma: usize },
    /// `C^{γγ'β'}_{αβα'} = (1/2π) ∫_{S¹} (2(δ_{αβ} z_{α'} + δ_{αα'} z_β + δ_{α'β} z_α) − 8 z_α z_β z_{α'}) z_γ z_{γ'} z_{β'}`
    SecondOrderCubic { alpha: usize, beta: usize, alpha2: usize, gamma: usize, gamma2: usize, beta2: usize },
    /// `C^{γβ'}_{αβ} = (1/2π) ∫_{S¹} (−δ_{αβ} + 2 z_α z_β) z_{β'} z_γ`
    SecondOrderQuadratic { alpha: usize, beta: usize, gamma: usize, beta2: usize },
}

/// Trapezoid rule on the unit circle; exact for trigonometric polynomials of degree < 64.
fn circle_average(f: impl Fn([f64; 2]) -> f64) -> f64 {
    const M: usize = 64;
    (0..M)
        .map(|m| {
            let th = 2.0 * PI * m as f64 / M as f64;
            f([th.cos(), th.sin()])
        })
        .sum::<f64>()
        / M as f64
}

impl BoundaryConstant {
    pub fn value(&self) -> Result<f64> {
        // ∫_{S¹} = 2π × average, so the 1/2π prefactors cancel
        Ok(match *self {
            BoundaryConstant::Pair { beta, gamma } => {
                let (b, g) = (index(beta)?, index(gamma)?);
                -circle_average(|z| z[b] * z[g])
            }
            BoundaryConstant::FirstOrder { alpha, rho, beta, gamma } => {
                let (a, r, b, g) = (index(alpha)?, index(rho)?, index(beta)?, index(gamma)?);
                -circle_average(|z| z[b] * (kron(a, g) - 2.0 * z[a] * z[g]) * z[r])
            }
            BoundaryConstant::SecondOrderCubic { alpha, beta, alpha2, gamma, gamma2, beta2 } => {
                let (a, b, a2) = (index(alpha)?, index(beta)?, index(alpha2)?);
                let (g, g2, b2) = (index(gamma)?, index(gamma2)?, index(beta2)?);
                circle_average(|z| {
                    (2.0 * (kron(a, b) * z[a2] + kron(a, a2) * z[b] + kron(a2, b) * z[a]) - 8.0 * z[a] * z[b] * z[a2])
                        * z[g]
                        * z[g2]
                        * z[b2]
                })
            }
            BoundaryConstant::SecondOrderQuadratic { alpha, beta, gamma, beta2 } => {
                let (a, b, g, b2) = (index(alpha)?, index(beta)?, index(gamma)?, index(beta2)?);
                circle_average(|z| (-kron(a, b) + 2.0 * z[a] * z[b]) * z[b2] * z[g])
            }
        })
    }
}

/// Zero-based tables of all boundary constants.
struct ConstantTables {
    pair: Tensor2,
    first: Tensor4,
    cubic: [[[[[[f64; 2]; 2]; 2]; 2]; 2]; 2],
    quadratic: Tensor4,
}

fn constant_tables() -> &'static ConstantTables {
    static TABLES: OnceLock<ConstantTables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut t = ConstantTables {
            pair: [[0.0; 2]; 2],
            first: [[[[0.0; 2]; 2]; 2]; 2],
            cubic: [[[[[[0.0; 2]; 2]; 2]; 2]; 2]; 2],
            quadratic: [[[[0.0; 2]; 2]; 2]; 2],
        };
        let v = |c: BoundaryConstant| c.value().expect("indices in range");
        for a in 0..2 {
            for b in 0..2 {
                t.pair[a][b] = v(BoundaryConstant::Pair { beta: a + 1, gamma: b + 1 });
                for c in 0..2 {
                    for d in 0..2 {
                        t.first[a][b][c][d] =
                            v(BoundaryConstant::FirstOrder { alpha: a + 1, rho: b + 1, beta: c + 1, gamma: d + 1 });
                        t.quadratic[a][b][c][d] = v(BoundaryConstant::SecondOrderQuadratic {
                            alpha: a + 1,
                            beta: b + 1,
                            gamma: c + 1,
                            beta2: d + 1,
                        });
                        for e in 0..2 {
                            for f in 0..2 {
                                t.cubic[a][b][c][d][e][f] = v(BoundaryConstant::SecondOrderCubic {
                                    alpha: a + 1,
                                    beta: b + 1,
                                    alpha2: c + 1,
                                    gamma: d + 1,
                                    gamma2: e + 1,
                                    beta2: f + 1,
                                });
                            }
                        }
                    }
                }
            }
        }
        t
    })
}

// ---------------------------------------------------------------------------
// Vector fields

/// `x ↦ (v(x), ∇v(x))` with `∇v[(i, j)] = ∂_j v^i`.
pub type FieldFn = Arc<dyn Fn(Vec2) -> (Vec2, Mat2) + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    NoiseMode,
    BiotSavartGrid,
    AnalyticTest,
    Mollified,
}

/// A vector field with the seminorms the commutator estimates are stated in.
#[derive(Clone)]
pub struct VelocityFieldModel {
    kind: FieldKind,
    eval: FieldFn,
    sup: f64,
    lipschitz: f64,
    log_lipschitz: Option<f64>,
}

impl fmt::Debug for VelocityFieldModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VelocityFieldModel")
            .field("kind", &self.kind)
            .field("sup", &self.sup)
            .field("lipschitz", &self.lipschitz)
            .field("log_lipschitz", &self.log_lipschitz)
            .finish_non_exhaustive()
    }
}

/// Spectral norm of a 2×2 matrix.
pub fn op_norm(m: &Mat2) -> f64 {
    let a = m.transpose() * m;
    let (tr, det) = (a.trace(), a.determinant());
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    (0.5 * tr + disc).max(0.0).sqrt()
}

impl VelocityFieldModel {
    /// `sup`, `lipschitz` and `log_lipschitz` are upper bounds for
    /// `‖v‖_∞`, `‖∇v‖_∞` and `‖v‖_LL`; infinite values are allowed.
    pub fn new(
        kind: FieldKind,
        eval: FieldFn,
        sup: f64,
        lipschitz: f64,
        log_lipschitz: Option<f64>,
    ) -> Result<Self> {
        let ok = |x: f64| !x.is_nan() && x >= 0.0;
        if !ok(sup) || !ok(lipschitz) || log_lipschitz.is_some_and(|l| !ok(l)) {
            return Err(Error::InvalidArgument("field seminorms must be non-negative".into()));
        }
        Ok(Self { kind, eval, sup, lipschitz, log_lipschitz })
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    #[inline]
    pub fn eval(&self, x: Vec2) -> (Vec2, Mat2) {
        (self.eval)(x)
    }

    pub fn value(&self, x: Vec2) -> Vec2 {
        self.eval(x).0
    }

    pub fn jacobian(&self, x: Vec2) -> Mat2 {
        self.eval(x).1
    }

    pub fn sup(&self) -> f64 {
        self.sup
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn log_lipschitz(&self) -> Option<f64> {
        self.log_lipschitz
    }

    pub fn noise_mode(mode: &NoiseMode) -> Self {
        let m = *mode;
        let (sup, lip) = m.sup_norms();
        Self {
            kind: FieldKind::NoiseMode,
            eval: Arc::new(move |x| (m.value(x), m.jacobian(x))),
            sup,
            lipschitz: lip,
            log_lipschitz: Some(lip),
        }
    }

    /// `v(x) = A x + b`.
    pub fn linear(a: Mat2, b: Vec2) -> Self {
        let lip = op_norm(&a);
        Self {
            kind: FieldKind::AnalyticTest,
            eval: Arc::new(move |x| (a * x + b, a)),
            sup: if lip == 0.0 { b.norm() } else { f64::INFINITY },
            lipschitz: lip,
            log_lipschitz: Some(lip),
        }
    }

    /// Finite sum of divergence-free modes.
    pub fn mode_sum(modes: Vec<NoiseMode>) -> Self {
        let (sup, lip) = modes.iter().fold((0.0, 0.0), |(s, l), m| {
            let (a, b) = m.sup_norms();
            (s + a, l + b)
        });
        Self {
            kind: FieldKind::AnalyticTest,
            eval: Arc::new(move |x| {
                modes.iter().fold((Vec2::zeros(), Mat2::zeros()), |(v, j), m| (v + m.value(x), j + m.jacobian(x)))
            }),
            sup,
            lipschitz: lip,
            log_lipschitz: Some(lip),
        }
    }

    /// Multiplies by the radial cutoff `φ(x) = S((|x| − radius)/width)`, `S` = [`smooth_step`].
    pub fn with_cutoff(self, radius: f64, width: f64) -> Result<Self> {
        if !(radius > 0.0) || !(width > 0.0) || !radius.is_finite() || !width.is_finite() {
            return Err(Error::InvalidArgument("cutoff radius and width must be positive".into()));
        }
        let slope_max = (1..2000).map(|i| smooth_step_slope(i as f64 / 2000.0).abs()).fold(0.0, f64::max) * 1.01;
        let inner = self.eval.clone();
        let eval: FieldFn = Arc::new(move |x| {
            let r = x.norm();
            let s = (r - radius) / width;
            let phi = smooth_step(s);
            if phi == 0.0 {
                return (Vec2::zeros(), Mat2::zeros());
            }
            let (v, j) = inner(x);
            let dphi = if r > 0.0 { x * (smooth_step_slope(s) / (width * r)) } else { Vec2::zeros() };
            (phi * v, phi * j + v * dphi.transpose())
        });
        let lipschitz = self.lipschitz + self.sup * slope_max / width;
        Ok(Self {
            kind: self.kind,
            eval,
            sup: self.sup,
            lipschitz,
            log_lipschitz: self.log_lipschitz.map(|l| l + self.sup * slope_max / width),
        })
    }

    /// Biot–Savart velocity of a grid vorticity, with spectral gradients
    /// interpolated between nodes. Seminorms are maxima over nodes and
    /// half-node points of the interpolant, plus 1%.
    pub fn biot_savart(grid: &VorticityGrid) -> Self {
        let n = grid.n;
        let u = biot_savart(grid);
        let (uxx, uxy) = spectral_gradient(&u.ux, n, grid.half_len);
        let (uyx, uyy) = spectral_gradient(&u.uy, n, grid.half_len);
        let lattice = grid.lattice();
        let fields = Arc::new([u.ux, u.uy, uxx, uxy, uyx, uyy]);
        let eval: FieldFn = {
            let fields = fields.clone();
            Arc::new(move |x| {
                let s: Vec<f64> = fields.iter().map(|f| lattice.interpolate(f, x)).collect();
                (vec2(s[0], s[1]), Mat2::new(s[2], s[3], s[4], s[5]))
            })
        };
        let h = grid.h();
        let (sup, lip) = (0..4 * n * n)
            .into_par_iter()
            .map(|k| {
                let (c, sub) = (k / 4, k % 4);
                let p = grid.node(c) + 0.5 * h * vec2((sub % 2) as f64, (sub / 2) as f64);
                let (v, j) = eval(p);
                (v.norm(), op_norm(&j))
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
        Self {
            kind: FieldKind::BiotSavartGrid,
            eval,
            sup: 1.01 * sup,
            lipschitz: 1.01 * lip,
            log_lipschitz: Some(1.01 * lip),
        }
    }

    /// `v(x) = (0, f(x₁ − offset))` with `f(s) = s ln|s|` on `|s| < 1` and 0 elsewhere:
    /// log-Lipschitz, not Lipschitz.
    pub fn log_lipschitz_shear(offset: f64) -> Self {
        Self {
            kind: FieldKind::AnalyticTest,
            eval: Arc::new(move |x| {
                let s = x.x - offset;
                let (f, df) = shear_profile(s);
                (vec2(0.0, f), Mat2::new(0.0, 0.0, df, 0.0))
            }),
            sup: 1.0 / E,
            lipschitz: f64::INFINITY,
            log_lipschitz: Some(shear_log_lipschitz()),
        }
    }
}

/// `(f, f')` for `f(s) = s ln|s|` on `|s| < 1`; the derivative is floored at `s = 0`.
fn shear_profile(s: f64) -> (f64, f64) {
    if s.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let a = s.abs().max(1e-300);
    (s * a.ln(), a.ln() + 1.0)
}

/// `sup_{0<d≤1/e} |f(s + d) − f(s)| / (d |ln d|)` on a dense grid, plus 1%.
fn shear_log_lipschitz() -> f64 {
    static VALUE: OnceLock<f64> = OnceLock::new();
    *VALUE.get_or_init(|| {
        let ds: Vec<f64> = (0..=400).map(|i| (1.0 / E) * (1e-8f64).powf(i as f64 / 400.0)).collect();
        (0..=2400)
            .into_par_iter()
            .map(|i| {
                let s = -1.2 + 1e-3 * i as f64;
                ds.iter()
                    .map(|&d| (shear_profile(s + d).0 - shear_profile(s).0).abs() / (d * d.ln().abs()))
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
            * 1.01
    })
}

/// Spectral `(∂_x, ∂_y)` on the periodic box, Nyquist bin zeroed.
fn spectral_gradient(values: &[f64], n: usize, half_len: f64) -> (Vec<f64>, Vec<f64>) {
    let fft = Fft2::shared(n);
    let kd: Vec<f64> =
        (0..n).map(|m| if m == n / 2 { 0.0 } else { PI * signed_freq(m, n) as f64 / half_len }).collect();
    let mut spec: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.forward(&mut spec);
    let i = Complex64::i();
    let mut sx: Vec<Complex64> = spec.iter().enumerate().map(|(idx, z)| i * kd[idx % n] * z).collect();
    let mut sy: Vec<Complex64> = spec.iter().enumerate().map(|(idx, z)| i * kd[idx / n] * z).collect();
    rayon::join(|| fft.inverse(&mut sx), || fft.inverse(&mut sy));
    (sx.into_iter().map(|z| z.re).collect(), sy.into_iter().map(|z| z.re).collect())
}

// ---------------------------------------------------------------------------
// Mollifier

/// Radial C^∞ mollifier: `χ = 1` on `|x| ≤ 1/4`, `χ = 0` for `|x| ≥ R ≤ 1`,
/// nonincreasing, with `R` fixed by `∫χ = 1`.
#[derive(Debug, Clone)]
pub struct Mollifier {
    radius: f64,
    /// Unit-scale nodes `(u, w, g)`: `∫χ f ≈ Σ w f(u)` and `∫ χ'(|u|) û f ≈ Σ g f(u)`.
    nodes: Vec<(Vec2, f64, Vec2)>,
}

const PLATEAU: f64 = 0.25;

fn profile(r: f64, radius: f64) -> f64 {
    smooth_step((r - PLATEAU) / (radius - PLATEAU))
}

fn profile_slope(r: f64, radius: f64) -> f64 {
    smooth_step_slope((r - PLATEAU) / (radius - PLATEAU)) / (radius - PLATEAU)
}

pub fn mollifier() -> &'static Mollifier {
    static M: OnceLock<Mollifier> = OnceLock::new();
    M.get_or_init(|| {
        let mass = |radius: f64| {
            PI * PLATEAU * PLATEAU
                + 2.0 * PI * integrate_fixed(|r| profile(r, radius) * r, PLATEAU, radius, 96)
        };
        let (mut lo, mut hi) = (PLATEAU + 1e-6, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mass(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let radius = 0.5 * (lo + hi);

        const ANGLES: usize = 48;
        let dth = 2.0 * PI / ANGLES as f64;
        let mut radial = Vec::new();
        for (a, b, order) in [(0.0, PLATEAU, 12), (PLATEAU, radius, 40)] {
            let (x, w) = gauss_legendre(order);
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            radial.extend(x.iter().zip(&w).map(|(&xi, &wi)| (mid + half * xi, wi * half)));
        }
        let mut nodes = Vec::new();
        for &(r, wr) in &radial {
            for m in 0..ANGLES {
                let th = (m as f64 + 0.5) * dth;
                let dir = vec2(th.cos(), th.sin());
                nodes.push((r * dir, profile(r, radius) * r * wr * dth, profile_slope(r, radius) * r * wr * dth * dir));
            }
        }
        // exact mass and first moment on the discrete rule
        let total: f64 = nodes.iter().map(|n| n.1).sum();
        let moment: f64 = nodes.iter().map(|n| n.2.x * n.0.x).sum();
        for n in &mut nodes {
            n.1 /= total;
            n.2 /= -moment;
        }
        Mollifier { radius, nodes }
    })
}

impl Mollifier {
    /// Support radius `R`.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// `χ(x)`.
    pub fn value(&self, x: Vec2) -> f64 {
        let r = x.norm();
        if r <= PLATEAU {
            1.0
        } else {
            profile(r, self.radius)
        }
    }

    /// `∫ |χ'(r)| r |ln(ε r)| 2π r dr`, the factor in `‖∇v_ε‖_∞ ≤ ‖v‖_LL · B(ε)`.
    pub fn log_lipschitz_gradient_factor(&self, eps: f64) -> f64 {
        integrate_fixed(
            |r| profile_slope(r, self.radius).abs() * r * (eps * r).ln().abs() * 2.0 * PI * r,
            PLATEAU,
            self.radius,
            96,
        )
    }
}

/// `v_ε = χ_ε ∗ v`, `χ_ε = ε⁻² χ(·/ε)`, for `0 < ε ≤ 1/e`.
pub fn mollify(v: &VelocityFieldModel, eps: f64) -> Result<VelocityFieldModel> {
    if !(eps > 0.0 && eps <= 1.0 / E) {
        return Err(Error::InvalidArgument(format!("mollification scale must lie in (0, 1/e], got {eps}")));
    }
    let chi = mollifier();
    let inner = v.eval.clone();
    let eval: FieldFn = Arc::new(move |x| {
        let (v0, _) = inner(x);
        let mut value = Vec2::zeros();
        let mut jac = Mat2::zeros();
        for (u, w, g) in &chi.nodes {
            let (vu, _) = inner(x - eps * u);
            value += *w * vu;
            jac += (vu - v0) * g.transpose();
        }
        (value, jac / eps)
    });
    let from_ll = v.log_lipschitz.map_or(f64::INFINITY, |ll| ll * chi.log_lipschitz_gradient_factor(eps));
    VelocityFieldModel::new(FieldKind::Mollified, eval, v.sup, v.lipschitz.min(from_ll), v.log_lipschitz)
}

// ---------------------------------------------------------------------------
// Forms

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormOrder {
    /// `K₁,ᵥ`
    First,
    /// `K₂,ᵥ`
    Second,
}

impl FormOrder {
    pub fn power(&self) -> i32 {
        match self {
            FormOrder::First => 1,
            FormOrder::Second => 2,
        }
    }
}

/// Treatment of coincident atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Diagonal {
    /// Coincident atom pairs are dropped: the form on `(ℝ²)² ∖ Δ₂`.
    #[default]
    Excluded,
    /// Coincident atom pairs contribute the angular limit of the kernel.
    Limit,
}

/// `K(x, y)` from `z = x − y ≠ 0` and `dv = v(x) − v(y)`.
#[inline]
pub fn kernel_value(order: FormOrder, z: Vec2, dv: Vec2) -> f64 {
    let r2 = z.norm_squared();
    let zd = z.dot(&dv);
    match order {
        FormOrder::First => -INV_2PI * zd / r2,
        FormOrder::Second => -INV_2PI * (dv.norm_squared() / r2 - 2.0 * zd * zd / (r2 * r2)),
    }
}

/// Average of `K(x, x − r ω)` over directions `ω` as `r → 0`, for `∇v(x) = jac`.
pub fn diagonal_limit(order: FormOrder, jac: &Mat2) -> f64 {
    match order {
        FormOrder::First => -jac.trace() / (4.0 * PI),
        FormOrder::Second => {
            let m = 0.5 * jac.trace();
            let s = 0.5 * (jac + jac.transpose());
            -INV_2PI * (0.5 * jac.norm_squared() - m * m - 0.5 * s.norm_squared())
        }
    }
}

/// Finite signed measure: weighted atoms plus an optional grid density.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SignedMeasure {
    pub atoms: Vec<(Vec2, f64)>,
    pub density: Option<VorticityGrid>,
}

impl SignedMeasure {
    /// `ξ_N = (1/N) Σ δ_{x_i}`.
    pub fn empirical(ensemble: &VortexEnsemble) -> Self {
        let a = ensemble.weight();
        Self { atoms: ensemble.positions().iter().map(|&p| (p, a)).collect(), density: None }
    }

    pub fn density(grid: &VorticityGrid) -> Self {
        Self { atoms: Vec::new(), density: Some(grid.clone()) }
    }

    /// `ξ_N − ξ`.
    pub fn difference(ensemble: &VortexEnsemble, grid: &VorticityGrid) -> Self {
        let mut neg = grid.clone();
        neg.values.iter_mut().for_each(|v| *v = -*v);
        Self { density: Some(neg), ..Self::empirical(ensemble) }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.atoms.iter_mut().for_each(|a| a.1 *= c);
        if let Some(d) = &mut out.density {
            d.values.iter_mut().for_each(|v| *v *= c);
        }
        out
    }

    /// `self + c · other`; densities must share the lattice.
    pub fn add(&self, other: &Self, c: f64) -> Result<Self> {
        let mut out = self.clone();
        out.atoms.extend(other.atoms.iter().map(|&(p, w)| (p, c * w)));
        out.density = match (&self.density, &other.density) {
            (None, None) => None,
            (Some(a), None) => Some(a.clone()),
            (None, Some(b)) => Some(b.clone()).map(|mut g| {
                g.values.iter_mut().for_each(|v| *v *= c);
                g
            }),
            (Some(a), Some(b)) => {
                check_same_lattice(a, b)?;
                let mut g = a.clone();
                g.values.iter_mut().zip(&b.values).for_each(|(x, y)| *x += c * y);
                Some(g)
            }
        };
        Ok(out)
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum::<f64>() + self.density.as_ref().map_or(0.0, |d| d.mass())
    }
}

fn check_same_lattice(a: &VorticityGrid, b: &VorticityGrid) -> Result<()> {
    if a.n != b.n || a.half_len != b.half_len {
        return Err(Error::InvalidArgument("densities live on different lattices".into()));
    }
    Ok(())
}

/// Contributions to `∬ K dμ dν`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FormParts {
    /// atom × atom
    pub atoms: f64,
    /// atom × density, both orders
    pub cross: f64,
    /// density × density
    pub field: f64,
}

impl FormParts {
    pub fn total(&self) -> f64 {
        self.atoms + self.cross + self.field
    }
}

/// `(position, mass, v, ∇v)` of every atom of `μ` and every nonzero cell of its density.
type Sample = (Vec2, f64, Vec2, Mat2);

fn atom_samples(v: &VelocityFieldModel, atoms: &[(Vec2, f64)]) -> Vec<Sample> {
    atoms
        .par_iter()
        .map(|&(p, w)| {
            let (val, jac) = v.eval(p);
            (p, w, val, jac)
        })
        .collect()
}

fn cell_samples(v: &VelocityFieldModel, grid: &VorticityGrid) -> Vec<Sample> {
    let area = grid.cell_area();
    (0..grid.n * grid.n)
        .into_par_iter()
        .filter(|&c| grid.values[c] != 0.0)
        .map(|c| {
            let p = grid.node(c);
            let (val, jac) = v.eval(p);
            (p, grid.values[c] * area, val, jac)
        })
        .collect()
}

/// `Σ_i Σ_j a_i b_j K(x_i, y_j)`; coincident pairs take the limit when `limit` is set.
fn pair_sum(order: FormOrder, xs: &[Sample], ys: &[Sample], limit: bool) -> f64 {
    ordered_sum(xs.par_iter().map(|&(x, a, vx, jx)| {
            let mut acc = 0.0;
            for &(y, b, vy, _) in ys {
                let z = x - y;
                if z.x == 0.0 && z.y == 0.0 {
                    if limit {
                        acc += b * diagonal_limit(order, &jx);
                    }
                    continue;
                }
                acc += b * kernel_value(order, z, vx - vy);
            }
            a * acc
        }))
}

/// `∬ K_{j,v} dμ dν`; coincident atoms follow `diagonal`, self-cells always take the limit.
pub fn bilinear_form(
    order: FormOrder,
    v: &VelocityFieldModel,
    mu: &SignedMeasure,
    nu: &SignedMeasure,
    diagonal: Diagonal,
) -> Result<FormParts> {
    let mu_atoms = atom_samples(v, &mu.atoms);
    let nu_atoms = atom_samples(v, &nu.atoms);
    let mut parts = FormParts {
        atoms: pair_sum(order, &mu_atoms, &nu_atoms, diagonal == Diagonal::Limit),
        ..Default::default()
    };
    if let Some(grid) = &nu.density {
        parts.cross += pair_sum(order, &mu_atoms, &cell_samples(v, grid), true);
    }
    if let Some(grid) = &mu.density {
        parts.cross += pair_sum(order, &nu_atoms, &cell_samples(v, grid), true);
    }
    if let (Some(a), Some(b)) = (&mu.density, &nu.density) {
        check_same_lattice(a, b)?;
        let op = LatticeOperator::new(order, v, a.half_len, a.n);
        let tb = op.apply(&b.values);
        parts.field = a.cell_area() * a.values.iter().zip(&tb).map(|(x, y)| x * y).sum::<f64>();
    }
    Ok(parts)
}

/// `∬_{∖Δ} K₁,ᵥ dm dm`.
pub fn form_k1(v: &VelocityFieldModel, m: &SignedMeasure, diagonal: Diagonal) -> Result<f64> {
    check_distinct_atoms(m)?;
    Ok(bilinear_form(FormOrder::First, v, m, m, diagonal)?.total())
}

fn check_distinct_atoms(m: &SignedMeasure) -> Result<()> {
    let mut order: Vec<usize> = (0..m.atoms.len()).collect();
    let key = |i: usize| (m.atoms[i].0.x, m.atoms[i].0.y);
    order.sort_by(|&a, &b| key(a).partial_cmp(&key(b)).unwrap_or(std::cmp::Ordering::Equal));
    for w in order.windows(2) {
        if key(w[0]) == key(w[1]) {
            return Err(Error::CoincidentPair { i: w[0].min(w[1]), j: w[0].max(w[1]) });
        }
    }
    Ok(())
}

/// `∬_{∖Δ} K₂,ᵥ dm dm`.
pub fn form_k2(v: &VelocityFieldModel, m: &SignedMeasure, diagonal: Diagonal) -> Result<f64> {
    check_distinct_atoms(m)?;
    Ok(bilinear_form(FormOrder::Second, v, m, m, diagonal)?.total())
}

// ---------------------------------------------------------------------------
// Lattice operator T

/// `(T f)_c = h² Σ_{c'≠c} K(y_c, y_{c'}) f_{c'} + h² K_lim(y_c) f_c` on an `n × n` grid.
struct LatticeOperator {
    order: FormOrder,
    area: f64,
    conv: PaddedConvolver,
    vx: Vec<f64>,
    vy: Vec<f64>,
    self_term: Vec<f64>,
    kernels: Vec<Arc<Vec<Complex64>>>,
}

impl LatticeOperator {
    fn new(order: FormOrder, v: &VelocityFieldModel, half_len: f64, n: usize) -> Self {
        let h = 2.0 * half_len / n as f64;
        let area = h * h;
        let node = |c: usize| vec2(-half_len + (c % n) as f64 * h, -half_len + (c / n) as f64 * h);
        let samples: Vec<(Vec2, Mat2)> = (0..n * n).into_par_iter().map(|c| v.eval(node(c))).collect();
        let conv = PaddedConvolver::new(n);
        let guard = |f: fn(f64, f64) -> f64| move |x: f64, y: f64| if x == 0.0 && y == 0.0 { 0.0 } else { f(x, y) };
        let kernels = match order {
            FormOrder::First => vec![
                cached_kernel("sio_dg_x", &conv, h, guard(|x, y| -INV_2PI * x / (x * x + y * y))),
                cached_kernel("sio_dg_y", &conv, h, guard(|x, y| -INV_2PI * y / (x * x + y * y))),
            ],
            FormOrder::Second => vec![
                cached_kernel("sio_hg_xx", &conv, h, guard(|x, y| hess_entry(x, y, 0, 0))),
                cached_kernel("sio_hg_xy", &conv, h, guard(|x, y| hess_entry(x, y, 0, 1))),
                cached_kernel("sio_hg_yy", &conv, h, guard(|x, y| hess_entry(x, y, 1, 1))),
            ],
        };
        Self {
            order,
            area,
            conv,
            vx: samples.iter().map(|s| s.0.x).collect(),
            vy: samples.iter().map(|s| s.0.y).collect(),
            self_term: samples.iter().map(|s| area * diagonal_limit(order, &s.1)).collect(),
            kernels,
        }
    }

    fn apply(&self, f: &[f64]) -> Vec<f64> {
        let (vx, vy) = (&self.vx, &self.vy);
        let k = &self.kernels;
        let mut out = match self.order {
            FormOrder::First => {
                let data = [
                    f.to_vec(),
                    f.iter().zip(vx).map(|(a, b)| a * b).collect(),
                    f.iter().zip(vy).map(|(a, b)| a * b).collect(),
                ];
                let s: Vec<Vec<Complex64>> = data.par_iter().map(|d| self.conv.spectrum(d)).collect();
                let jobs: Vec<Vec<(&[Complex64], &[Complex64])>> = vec![
                    vec![(&s[0], &k[0])],
                    vec![(&s[0], &k[1])],
                    vec![(&s[1], &k[0]), (&s[2], &k[1])],
                ];
                let r: Vec<Vec<f64>> = jobs.par_iter().map(|p| self.conv.convolve(p)).collect();
                (0..f.len()).map(|c| vx[c] * r[0][c] + vy[c] * r[1][c] - r[2][c]).collect::<Vec<f64>>()
            }
            FormOrder::Second => {
                let prod = |g: &dyn Fn(usize) -> f64| (0..f.len()).map(|c| f[c] * g(c)).collect::<Vec<f64>>();
                let data = [
                    f.to_vec(),
                    prod(&|c| vx[c]),
                    prod(&|c| vy[c]),
                    prod(&|c| vx[c] * vx[c]),
                    prod(&|c| vx[c] * vy[c]),
                    prod(&|c| vy[c] * vy[c]),
                ];
                let s: Vec<Vec<Complex64>> = data.par_iter().map(|d| self.conv.spectrum(d)).collect();
                let two_xy: Vec<Complex64> = s[4].iter().map(|z| 2.0 * z).collect();
                let jobs: Vec<Vec<(&[Complex64], &[Complex64])>> = vec![
                    vec![(&s[0], &k[0])],
                    vec![(&s[0], &k[1])],
                    vec![(&s[0], &k[2])],
                    vec![(&s[1], &k[0]), (&s[2], &k[1])],
                    vec![(&s[1], &k[1]), (&s[2], &k[2])],
                    vec![(&s[3], &k[0]), (&two_xy, &k[1]), (&s[5], &k[2])],
                ];
                let r: Vec<Vec<f64>> = jobs.par_iter().map(|p| self.conv.convolve(p)).collect();
                (0..f.len())
                    .map(|c| {
                        let (a, b) = (vx[c], vy[c]);
                        a * a * r[0][c] + 2.0 * a * b * r[1][c] + b * b * r[2][c] - 2.0 * (a * r[3][c] + b * r[4][c])
                            + r[5][c]
                    })
                    .collect()
            }
        };
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.area * *o + self.self_term[c] * f[c];
        }
        out
    }
}

#[inline]
fn hess_entry(x: f64, y: f64, a: usize, b: usize) -> f64 {
    let p = [x, y];
    let r2 = x * x + y * y;
    -INV_2PI * (kron(a, b) / r2 - 2.0 * p[a] * p[b] / (r2 * r2))
}

// ---------------------------------------------------------------------------
// ∂_α T ∂_β

/// `A_{αβ} = ∂_α T_{j,v} ∂_β` on an `n × n` grid over `[−L, L)²`.
///
/// Derivatives are sixth-order central differences with periodic wrap, so
/// they are exactly skew-adjoint and only the few nodes at the box edge see
/// the wrap; `T` is the symmetric lattice operator used by [`bilinear_form`].
pub struct SioOperator {
    n: usize,
    half_len: f64,
    lattice: LatticeOperator,
}

/// Components `[A₁₁ f, A₁₂ f, A₂₁ f, A₂₂ f]`.
pub type SioOutput = [Vec<f64>; 4];

const STENCIL: [f64; 3] = [3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];

impl SioOperator {
    pub fn new(order: FormOrder, v: &VelocityFieldModel, half_len: f64, n: usize) -> Result<Self> {
        if n < 8 || !n.is_multiple_of(2) || !(half_len > 0.0) {
            return Err(Error::InvalidArgument(format!("bad lattice: n = {n}, L = {half_len}")));
        }
        Ok(Self { n, half_len, lattice: LatticeOperator::new(order, v, half_len, n) })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_len(&self) -> f64 {
        self.half_len
    }

    pub fn cell_area(&self) -> f64 {
        self.lattice.area
    }

    /// `∂_axis f` (axis 0 = x, 1 = y).
    pub fn derivative(&self, f: &[f64], axis: usize) -> Vec<f64> {
        let n = self.n;
        let inv_h = n as f64 / (2.0 * self.half_len);
        let at = |row: usize, col: usize, k: isize| -> f64 {
            let (r, c) = if axis == 0 {
                (row, (col as isize + k).rem_euclid(n as isize) as usize)
            } else {
                ((row as isize + k).rem_euclid(n as isize) as usize, col)
            };
            f[r * n + c]
        };
        (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let (row, col) = (idx / n, idx % n);
                STENCIL
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * (at(row, col, k as isize + 1) - at(row, col, -(k as isize) - 1)))
                    .sum::<f64>()
                    * inv_h
            })
            .collect()
    }

    /// `T f`.
    pub fn apply_t(&self, f: &[f64]) -> Vec<f64> {
        self.lattice.apply(f)
    }

    pub fn apply(&self, f: &[f64]) -> Result<SioOutput> {
        if f.len() != self.n * self.n {
            return Err(Error::InvalidArgument(format!("expected {} values, got {}", self.n * self.n, f.len())));
        }
        let inner: Vec<Vec<f64>> = (0..2).into_par_iter().map(|b| self.apply_t(&self.derivative(f, b))).collect();
        let out: Vec<Vec<f64>> = (0..4).into_par_iter().map(|ab| self.derivative(&inner[ab % 2], ab / 2)).collect();
        Ok(out.try_into().expect("four components"))
    }

    /// `A* G = Σ_{αβ} ∂_β T ∂_α G_{αβ}`.
    pub fn adjoint(&self, g: &SioOutput) -> Vec<f64> {
        let parts: Vec<Vec<f64>> = (0..2)
            .into_par_iter()
            .map(|b| {
                let d1 = self.derivative(&g[b], 0);
                let d2 = self.derivative(&g[2 + b], 1);
                let s: Vec<f64> = d1.iter().zip(&d2).map(|(x, y)| x + y).collect();
                self.derivative(&self.apply_t(&s), b)
            })
            .collect();
        parts[0].iter().zip(&parts[1]).map(|(x, y)| x + y).collect()
    }
}

/// `∂_α T_{j,v} ∂_β f` for a grid function `f`.
pub fn sio_apply(v: &VelocityFieldModel, f: &VorticityGrid, order: FormOrder) -> Result<SioOutput> {
    f.check_support()?;
    SioOperator::new(order, v, f.half_len, f.n)?.apply(&f.values)
}

/// Principal-value kernel `−∂_{x_α}∂_{y_β} K(x, y)` from `z = x − y`,
/// `w = v(x) − v(y)`, `jx = ∇v(x)`, `jy = ∇v(y)`.
fn pv_kernel(order: FormOrder, z: Vec2, w: Vec2, jx: &Mat2, jy: &Mat2) -> Tensor2 {
    let (h, t, q) = g_derivatives(z);
    let w = [w.x, w.y];
    let mut out = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let mut acc = 0.0;
            match order {
                FormOrder::First => {
                    for g in 0..2 {
                        acc += t[a][b][g] * w[g] + h[b][g] * jx[(g, a)] + h[a][g] * jy[(g, b)];
                    }
                }
                FormOrder::Second => {
                    for g in 0..2 {
                        for d in 0..2 {
                            acc += q[a][b][g][d] * w[g] * w[d]
                                + 2.0 * t[b][g][d] * jx[(g, a)] * w[d]
                                + 2.0 * t[a][g][d] * w[g] * jy[(d, b)]
                                + 2.0 * h[g][d] * jx[(g, a)] * jy[(d, b)];
                        }
                    }
                }
            }
            out[a][b] = acc;
        }
    }
    out
}

/// Unit basis matrix `E_p`, `p = 2i + j`.
fn basis(p: usize) -> Mat2 {
    let mut m = Mat2::zeros();
    m[(p / 2, p % 2)] = 1.0;
    m
}

/// Frozen-coefficient kernel at the diagonal, bilinear in `(j, k)`.
fn frozen_kernel(order: FormOrder, z: Vec2, j: &Mat2, k: &Mat2) -> Tensor2 {
    match order {
        FormOrder::First => pv_kernel(order, z, j * z, j, j),
        FormOrder::Second => {
            let a = pv_kernel(order, z, (j + k) * z, &(j + k), &(j + k));
            let b = pv_kernel(order, z, (j - k) * z, &(j - k), &(j - k));
            let mut out = [[0.0; 2]; 2];
            for r in 0..2 {
                for c in 0..2 {
                    out[r][c] = 0.25 * (a[r][c] - b[r][c]);
                }
            }
            out
        }
    }
}

/// `lim_M [Σ_{0<|m|_∞≤M} F(m) − PV∫_{|z|_∞ ≤ M+½} F]` for degree −2 homogeneous `F`.
fn lattice_excess<const K: usize>(f: impl Fn(Vec2) -> [f64; K] + Sync) -> [f64; K] {
    const M: i64 = 300;
    let add = |mut a: [f64; K], b: [f64; K]| {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        a
    };
    let lattice = (-M..=M)
        .into_par_iter()
        .map(|j| {
            let mut acc = [0.0; K];
            for i in -M..=M {
                if i != 0 || j != 0 {
                    acc = add(acc, f(vec2(i as f64, j as f64)));
                }
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold([0.0; K], add);
    // PV over the disc vanishes; the square minus the disc gives ∫ Ω(θ) ln(1/max(|cos θ|, |sin θ|)) dθ
    let (x, w) = gauss_legendre(32);
    let mut angular = [0.0; K];
    for oct in 0..8 {
        let (a, b) = (oct as f64 * PI / 4.0, (oct + 1) as f64 * PI / 4.0);
        for (xi, wi) in x.iter().zip(&w) {
            let th = 0.5 * (a + b) + 0.5 * (b - a) * xi;
            let (c, s) = (th.cos(), th.sin());
            let weight = wi * 0.5 * (b - a) * -(c.abs().max(s.abs())).ln();
            angular = add(angular, f(vec2(c, s)).map(|v| v * weight));
        }
    }
    let mut out = lattice;
    out.iter_mut().zip(angular).for_each(|(x, y)| *x -= y);
    out
}

/// Lattice excess of the frozen kernel: linear (first order) or quadratic (second order) in `∇v`.
fn excess_table(order: FormOrder) -> &'static [f64; 64] {
    static FIRST: OnceLock<[f64; 64]> = OnceLock::new();
    static SECOND: OnceLock<[f64; 64]> = OnceLock::new();
    let cell = if order == FormOrder::First { &FIRST } else { &SECOND };
    cell.get_or_init(|| {
        lattice_excess::<64>(|z| {
            let mut out = [0.0; 64];
            for p in 0..4 {
                for q in 0..4 {
                    if order == FormOrder::First && q > 0 {
                        continue;
                    }
                    let k = frozen_kernel(order, z, &basis(p), &basis(q));
                    for a in 0..2 {
                        for b in 0..2 {
                            out[((a * 2 + b) * 4 + p) * 4 + q] = k[a][b];
                        }
                    }
                }
            }
            out
        })
    })
}

fn lattice_excess_at(order: FormOrder, j: &Mat2) -> Tensor2 {
    let table = excess_table(order);
    let jp = |p: usize| j[(p / 2, p % 2)];
    let mut out = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let base = (a * 2 + b) * 16;
            out[a][b] = match order {
                FormOrder::First => (0..4).map(|p| table[base + p * 4] * jp(p)).sum(),
                FormOrder::Second => {
                    (0..16).map(|pq| table[base + pq] * jp(pq / 4) * jp(pq % 4)).sum()
                }
            };
        }
    }
    out
}

/// Local term of `∂_α T ∂_β` at a point with `∇v = j`, assembled from boundary constants.
pub fn local_term(order: FormOrder, j: &Mat2) -> Tensor2 {
    let c = constant_tables();
    let mut out = [[0.0; 2]; 2];
    for a2 in 0..2 {
        for b2 in 0..2 {
            let mut acc = 0.0;
            match order {
                FormOrder::First => {
                    let (a, b) = (a2, b2);
                    for g in 0..2 {
                        acc += c.pair[b][g] * j[(g, a)];
                        for r in 0..2 {
                            acc += c.first[a][r][b][g] * j[(g, r)];
                        }
                    }
                }
                FormOrder::Second => {
                    for a in 0..2 {
                        for b in 0..2 {
                            for g in 0..2 {
                                for g2 in 0..2 {
                                    acc += c.cubic[a][b][a2][g][g2][b2] * j[(a, g)] * j[(b, g2)];
                                }
                                acc += c.quadratic[a][b][g][b2]
                                    * (j[(a, a2)] * j[(b, g)] + j[(b, a2)] * j[(a, g)]);
                            }
                        }
                    }
                }
            }
            out[a2][b2] = acc;
        }
    }
    out
}

/// Largest grid accepted by [`sio_apply_direct`].
pub const DIRECT_MAX_N: usize = 128;

/// `∂_α T ∂_β f` by principal-value quadrature of `−∂_{x_α}∂_{y_β} K`, the
/// boundary-constant local term and the lattice correction of the frozen
/// kernel. Cost is `O(n⁴)`.
pub fn sio_apply_direct(v: &VelocityFieldModel, f: &VorticityGrid, order: FormOrder) -> Result<SioOutput> {
    f.check_support()?;
    let n = f.n;
    if n > DIRECT_MAX_N {
        return Err(Error::InvalidArgument(format!("direct quadrature is limited to n ≤ {DIRECT_MAX_N}, got {n}")));
    }
    let area = f.cell_area();
    let samples: Vec<(Vec2, Vec2, Mat2)> = (0..n * n)
        .into_par_iter()
        .map(|c| {
            let p = f.node(c);
            let (val, jac) = v.eval(p);
            (p, val, jac)
        })
        .collect();
    let sources: Vec<usize> = (0..n * n).filter(|&c| f.values[c] != 0.0).collect();
    let rows: Vec<Tensor2> = (0..n * n)
        .into_par_iter()
        .map(|c| {
            let (x, vx, jx) = samples[c];
            let mut acc = [[0.0; 2]; 2];
            for &s in &sources {
                if s == c {
                    continue;
                }
                let (y, vy, jy) = samples[s];
                let k = pv_kernel(order, x - y, vx - vy, &jx, &jy);
                for a in 0..2 {
                    for b in 0..2 {
                        acc[a][b] += k[a][b] * f.values[s];
                    }
                }
            }
            let local = local_term(order, &jx);
            let excess = lattice_excess_at(order, &jx);
            for a in 0..2 {
                for b in 0..2 {
                    acc[a][b] = area * acc[a][b] + (local[a][b] - excess[a][b]) * f.values[c];
                }
            }
            acc
        })
        .collect();
    Ok([0, 1, 2, 3].map(|ab| rows.iter().map(|r| r[ab / 2][ab % 2]).collect()))
}

// ---------------------------------------------------------------------------
// Norm probes

/// Empirical `‖∂T∂‖_{L²→L²}` on one lattice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub order: FormOrder,
    pub n: usize,
    /// Largest ratio over random Gaussian bumps.
    pub random_max: f64,
    /// Power-iteration estimate.
    pub power_estimate: f64,
    pub norm: f64,
    /// `‖∇v‖_∞` used for the fit.
    pub grad_sup: f64,
    /// `norm / ‖∇v‖_∞^j`.
    pub fitted_constant: f64,
}

fn l2(values: &[f64], area: f64) -> f64 {
    (values.iter().map(|x| x * x).sum::<f64>() * area).sqrt()
}

fn output_l2(out: &SioOutput, area: f64) -> f64 {
    out.iter().map(|c| l2(c, area).powi(2)).sum::<f64>().sqrt()
}

/// Ratios `‖A f‖/‖f‖` over `bumps` random Gaussian bumps, then `iterations`
/// steps of power iteration on `A*A` from the best bump.
///
/// Inputs and outputs are restricted to the core `|x|_∞ ≤ L/2`, away from the
/// periodic wrap of the difference stencils at the box edge.
pub fn probe_operator_norm<R: Rng + ?Sized>(
    v: &VelocityFieldModel,
    order: FormOrder,
    half_len: f64,
    n: usize,
    bumps: usize,
    iterations: usize,
    rng: &mut R,
) -> Result<ProbeReport> {
    let op = SioOperator::new(order, v, half_len, n)?;
    let area = op.cell_area();
    let h = 2.0 * half_len / n as f64;
    let node = |c: usize| vec2(-half_len + (c % n) as f64 * h, -half_len + (c / n) as f64 * h);
    let core: Vec<bool> = (0..n * n).map(|c| node(c).amax() <= 0.5 * half_len).collect();
    let mask = |f: &mut [f64]| f.iter_mut().zip(&core).for_each(|(x, &k)| if !k { *x = 0.0 });
    let apply = |f: &[f64]| -> Result<SioOutput> {
        let mut out = op.apply(f)?;
        out.iter_mut().for_each(|c| mask(c));
        Ok(out)
    };
    let mut best = (0.0, vec![0.0; n * n]);
    for _ in 0..bumps.max(1) {
        let center = vec2(rng.gen_range(-0.3..0.3) * half_len, rng.gen_range(-0.3..0.3) * half_len);
        let width = rng.gen_range(0.05..0.15) * half_len;
        let mut f: Vec<f64> =
            (0..n * n).map(|c| (-(node(c) - center).norm_squared() / (2.0 * width * width)).exp()).collect();
        mask(&mut f);
        let ratio = output_l2(&apply(&f)?, area) / l2(&f, area);
        if ratio > best.0 {
            best = (ratio, f);
        }
    }
    let random_max = best.0;
    let mut x = best.1;
    let mut power_estimate = random_max;
    for _ in 0..iterations {
        let nx = l2(&x, area);
        x.iter_mut().for_each(|a| *a /= nx);
        let ax = apply(&x)?;
        power_estimate = power_estimate.max(output_l2(&ax, area));
        x = op.adjoint(&ax);
        mask(&mut x);
    }
    let norm = random_max.max(power_estimate);
    let grad_sup = if v.lipschitz().is_finite() {
        v.lipschitz()
    } else {
        (0..n * n)
            .into_par_iter()
            .map(|c| op_norm(&v.jacobian(node(c))))
            .reduce(|| 0.0, f64::max)
    };
    Ok(ProbeReport {
        order,
        n,
        random_max,
        power_estimate,
        norm,
        grad_sup,
        fitted_constant: norm / grad_sup.powi(order.power()),
    })
}

// ---------------------------------------------------------------------------
// Right-hand sides of the commutator estimates (p = ∞, C_p = 1)

/// Inputs shared by the commutator estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommutatorScales {
    pub f_avg: f64,
    pub n: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    /// `‖μ‖_∞`
    pub density_sup: f64,
}

impl CommutatorScales {
    fn core(&self) -> f64 {
        let l3 = self.eps3.ln().abs();
        self.f_avg + l3 / self.n as f64 + self.density_sup * self.eps3 * self.eps3
    }

    fn tail(&self) -> f64 {
        self.density_sup.sqrt() + 1.0 / self.eps3
    }

    /// `‖∇v‖(F + |ln ε₃|/N + ‖μ‖ε₃² + ε₁(‖μ‖^{1/2} + ε₃⁻¹))`.
    pub fn first_order_lipschitz(&self, grad_sup: f64) -> f64 {
        grad_sup * (self.core() + self.eps1 * self.tail())
    }

    /// `|ln ε₃| ‖v‖_LL (F + |ln ε₃|/N + ‖μ‖ε₃²) + ‖v‖_LL ε₂|ln ε₂| (ε₃⁻¹ + ‖μ‖^{1/2})`.
    pub fn first_order_log_lipschitz(&self, log_lipschitz: f64) -> f64 {
        let l3 = self.eps3.ln().abs();
        log_lipschitz * (l3 * self.core() + self.eps2 * self.eps2.ln().abs() * self.tail())
    }

    /// `‖∇v‖²(F + |ln ε₃|/N + ‖μ‖ε₃² + ε₁(‖μ‖^{1/2} + ε₃⁻¹))`.
    pub fn second_order(&self, grad_sup: f64) -> f64 {
        grad_sup * grad_sup * (self.core() + self.eps1 * self.tail())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bump_grid(half_len: f64, n: usize, center: Vec2, width: f64) -> VorticityGrid {
        VorticityGrid::from_fn(half_len, n, |p| (-(p - center).norm_squared() / (2.0 * width * width)).exp()).unwrap()
    }

    fn smooth_field() -> VelocityFieldModel {
        VelocityFieldModel::mode_sum(vec![
            NoiseMode::fourier(0.7, vec2(1.3, 0.4), 0.3).unwrap(),
            NoiseMode::fourier(-0.5, vec2(-0.6, 1.1), 1.7).unwrap(),
        ])
    }

    #[test]
    fn component_kernels_have_zero_circle_means() {
        let nodes = 4096;
        let mean = |k: ComponentKernel| {
            (0..nodes)
                .map(|m| {
                    let th = 2.0 * PI * m as f64 / nodes as f64;
                    k.value(vec2(th.cos(), th.sin())).unwrap()
                })
                .sum::<f64>()
                / nodes as f64
        };
        for a in 1..=2 {
            for b in 1..=2 {
                assert!(mean(ComponentKernel::Zero { alpha: a, beta: b }).abs() < 1e-12);
                for r in 1..=2 {
                    for nu in 1..=2 {
                        assert!(mean(ComponentKernel::One { alpha: a, beta: b, rho: r, nu }).abs() < 1e-12);
                        for g in 1..=2 {
                            for g2 in 1..=2 {
                                let k = ComponentKernel::Two { alpha: a, beta: b, alpha2: r, beta2: nu, gamma: g, gamma2: g2 };
                                assert!(mean(k).abs() < 1e-12);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn component_kernel_errors() {
        let k = ComponentKernel::Zero { alpha: 1, beta: 3 };
        assert!(matches!(k.value(vec2(1.0, 0.0)), Err(Error::InvalidArgument(_))));
        let k = ComponentKernel::Zero { alpha: 1, beta: 2 };
        assert!(matches!(k.value(Vec2::zeros()), Err(Error::Singular(_))));
        assert!(BoundaryConstant::Pair { beta: 0, gamma: 1 }.value().is_err());
    }

    #[test]
    fn pair_constants() {
        let c = |b, g| BoundaryConstant::Pair { beta: b, gamma: g }.value().unwrap();
        assert!((c(1, 1) + 0.5).abs() < 1e-14);
        assert!((c(2, 2) + 0.5).abs() < 1e-14);
        assert!(c(1, 2).abs() < 1e-14);
    }

    #[test]
    fn diagonal_limit_is_the_angular_average() {
        let j = Mat2::new(0.3, -1.2, 0.7, 0.5);
        for order in [FormOrder::First, FormOrder::Second] {
            let m = 20000;
            let avg = (0..m)
                .map(|i| {
                    let th = 2.0 * PI * (i as f64 + 0.5) / m as f64;
                    let w = vec2(th.cos(), th.sin());
                    kernel_value(order, w, j * w)
                })
                .sum::<f64>()
                / m as f64;
            assert!((avg - diagonal_limit(order, &j)).abs() < 1e-12, "{order:?}");
        }
    }

    fn small_pair() -> (VortexEnsemble, VorticityGrid) {
        let grid = bump_grid(1.5, 16, vec2(0.1, -0.05), 0.3).normalized().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = (0..10).map(|_| vec2(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))).collect();
        (VortexEnsemble::new(pts).unwrap(), grid)
    }

    fn brute_force(order: FormOrder, v: &VelocityFieldModel, m: &SignedMeasure, diagonal: Diagonal) -> f64 {
        // (position, mass, is_atom)
        let mut pts: Vec<(Vec2, f64, bool)> = m.atoms.iter().map(|&(p, w)| (p, w, true)).collect();
        if let Some(g) = &m.density {
            pts.extend((0..g.n * g.n).map(|c| (g.node(c), g.values[c] * g.cell_area(), false)));
        }
        let mut total = 0.0;
        for &(x, a, xa) in &pts {
            for &(y, b, ya) in &pts {
                let (vx, jx) = v.eval(x);
                if x == y {
                    if !(xa && ya) || diagonal == Diagonal::Limit {
                        total += a * b * diagonal_limit(order, &jx);
                    }
                    continue;
                }
                total += a * b * kernel_value(order, x - y, vx - v.value(y));
            }
        }
        total
    }

    #[test]
    fn forms_match_brute_force() {
        let (ens, grid) = small_pair();
        let m = SignedMeasure::difference(&ens, &grid);
        let v = smooth_field();
        for order in [FormOrder::First, FormOrder::Second] {
            for diag in [Diagonal::Excluded, Diagonal::Limit] {
                let fast = bilinear_form(order, &v, &m, &m, diag).unwrap().total();
                let slow = brute_force(order, &v, &m, diag);
                assert!((fast - slow).abs() < 1e-10 * (1.0 + slow.abs()), "{order:?} {diag:?}: {fast} vs {slow}");
            }
        }
    }

    #[test]
    fn identity_field_gives_diagonal_mass() {
        let (ens, grid) = small_pair();
        let m = SignedMeasure::difference(&ens, &grid);
        let v = VelocityFieldModel::linear(Mat2::identity(), vec2(0.3, -0.2));
        let mass2 = m.total_mass().powi(2);
        let n = ens.len() as f64;
        let k1 = form_k1(&v, &m, Diagonal::Limit).unwrap();
        assert!((k1 + INV_2PI * mass2).abs() < 1e-12);
        let k1 = form_k1(&v, &m, Diagonal::Excluded).unwrap();
        assert!((k1 - INV_2PI * (1.0 / n - mass2)).abs() < 1e-12);
        let k2 = form_k2(&v, &m, Diagonal::Excluded).unwrap();
        assert!((k2 + INV_2PI * (1.0 / n - mass2)).abs() < 1e-12);
    }

    #[test]
    fn rotation_has_vanishing_first_order_form() {
        let (ens, grid) = small_pair();
        let m = SignedMeasure::difference(&ens, &grid);
        let v = VelocityFieldModel::linear(Mat2::new(0.0, -1.0, 1.0, 0.0), Vec2::zeros());
        assert!(form_k1(&v, &m, Diagonal::Excluded).unwrap().abs() < 1e-13);
    }

    #[test]
    fn bilinear_form_is_symmetric_and_polarizes() {
        let (ens, grid) = small_pair();
        let mu = SignedMeasure::difference(&ens, &grid);
        let other = bump_grid(1.5, 16, vec2(-0.2, 0.3), 0.25);
        let nu = SignedMeasure { atoms: vec![(vec2(0.2, 0.1), 0.3), (vec2(-0.4, 0.0), -0.1)], density: Some(other) };
        let v = smooth_field();
        for order in [FormOrder::First, FormOrder::Second] {
            let b = |x: &SignedMeasure, y: &SignedMeasure| bilinear_form(order, &v, x, y, Diagonal::Excluded).unwrap().total();
            let (bmn, bnm) = (b(&mu, &nu), b(&nu, &mu));
            assert!((bmn - bnm).abs() < 1e-12);
            let plus = mu.add(&nu, 1.0).unwrap();
            let minus = mu.add(&nu, -1.0).unwrap();
            assert!((b(&plus, &plus) - b(&minus, &minus) - 4.0 * bmn).abs() < 1e-11);
        }
    }

    #[test]
    fn sio_adjoint_is_consistent() {
        let v = smooth_field().with_cutoff(0.8, 0.4).unwrap();
        let op = SioOperator::new(FormOrder::Second, &v, 2.0, 32).unwrap();
        let f = bump_grid(2.0, 32, vec2(0.2, 0.1), 0.3).values;
        let g: SioOutput = [0, 1, 2, 3].map(|k| bump_grid(2.0, 32, vec2(-0.1 * k as f64, 0.2), 0.35).values);
        let af = op.apply(&f).unwrap();
        let lhs: f64 = (0..4).map(|k| af[k].iter().zip(&g[k]).map(|(a, b)| a * b).sum::<f64>()).sum();
        let rhs: f64 = f.iter().zip(&op.adjoint(&g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn integration_by_parts_matches_form() {
        let (l, n) = (2.0, 64);
        let v = smooth_field().with_cutoff(0.9, 0.4).unwrap();
        let op = SioOperator::new(FormOrder::Second, &v, l, n).unwrap();
        let phi = bump_grid(l, n, vec2(0.1, 0.0), 0.3).values;
        let psi = bump_grid(l, n, vec2(-0.15, 0.2), 0.25).values;
        let neg_lap = |f: &[f64]| -> Vec<f64> {
            let dxx = op.derivative(&op.derivative(f, 0), 0);
            let dyy = op.derivative(&op.derivative(f, 1), 1);
            dxx.iter().zip(&dyy).map(|(a, b)| -(a + b)).collect()
        };
        let mu = SignedMeasure::density(&VorticityGrid::new(l, n, neg_lap(&phi)).unwrap());
        let nu = SignedMeasure::density(&VorticityGrid::new(l, n, neg_lap(&psi)).unwrap());
        let form = bilinear_form(FormOrder::Second, &v, &mu, &nu, Diagonal::Excluded).unwrap().total();
        let mut rhs = 0.0;
        for b in 0..2 {
            let out = op.apply(&op.derivative(&psi, b)).unwrap();
            for a in 0..2 {
                let da = op.derivative(&phi, a);
                rhs -= op.cell_area() * da.iter().zip(&out[2 * a + b]).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        assert!((form - rhs).abs() < 1e-9 * form.abs(), "{form} vs {rhs}");
    }

    #[test]
    fn mollifier_shape() {
        let chi = mollifier();
        assert!(chi.radius() > PLATEAU && chi.radius() <= 1.0);
        let mass = PI * PLATEAU * PLATEAU
            + 2.0 * PI * integrate_fixed(|r| chi.value(vec2(r, 0.0)) * r, PLATEAU, chi.radius(), 200);
        assert!((mass - 1.0).abs() < 1e-10);
        assert_eq!(chi.value(vec2(0.2, 0.1)), 1.0);
        assert_eq!(chi.value(vec2(1.0, 0.0)), 0.0);
        let vals: Vec<f64> = (0..200).map(|i| chi.value(vec2(i as f64 / 199.0, 0.0))).collect();
        assert!(vals.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn mollification_reproduces_affine_fields() {
        let a = Mat2::new(0.4, -1.1, 2.0, 0.3);
        let b = vec2(0.5, -0.7);
        let v = VelocityFieldModel::linear(a, b);
        let ve = mollify(&v, 0.1).unwrap();
        for p in [vec2(0.0, 0.0), vec2(0.3, -1.2), vec2(2.0, 1.0)] {
            let (val, jac) = ve.eval(p);
            assert!((val - (a * p + b)).norm() < 1e-10);
            assert!((jac - a).norm() < 1e-10);
        }
        assert!(mollify(&v, 0.5).is_err());
        assert!(mollify(&v, 0.0).is_err());
    }

    #[test]
    fn log_lipschitz_mollification_bounds() {
        let v = VelocityFieldModel::log_lipschitz_shear(0.0);
        let ll = v.log_lipschitz().unwrap();
        assert!((1.0..2.5).contains(&ll), "LL = {ll}");
        for eps in [0.1, 0.03, 0.01] {
            let ve = mollify(&v, eps).unwrap();
            let mut worst = 0.0f64;
            let mut grad = 0.0f64;
            for i in 0..400 {
                let p = vec2(-1.3 + 2.6 * i as f64 / 399.0, 0.2);
                let (val, jac) = ve.eval(p);
                assert!(val.norm() <= v.sup() + 1e-12);
                worst = worst.max((val - v.value(p)).norm());
                grad = grad.max(op_norm(&jac));
            }
            assert!(worst <= ll * eps * eps.ln().abs(), "ε = {eps}: {worst}");
            assert!(grad <= ve.lipschitz(), "ε = {eps}: {grad} > {}", ve.lipschitz());
        }
    }

    #[test]
    fn direct_route_converges_to_lattice_route() {
        // both routes carry O(h²) quadrature error; their gap must shrink accordingly
        let l = 1.5;
        let v = smooth_field().with_cutoff(0.6, 0.4).unwrap();
        let gap = |n: usize, order: FormOrder| {
            let c = vec2(0.05, -0.1);
            let f = VorticityGrid::from_fn(l, n, |p| smooth_step((p - c).norm() / 0.6)).unwrap();
            let core: Vec<usize> = (0..n * n).filter(|&c| f.node(c).amax() <= 0.5 * l).collect();
            let a = sio_apply(&v, &f, order).unwrap();
            let b = sio_apply_direct(&v, &f, order).unwrap();
            let num: f64 = (0..4).map(|k| core.iter().map(|&c| (a[k][c] - b[k][c]).powi(2)).sum::<f64>()).sum();
            let den: f64 = (0..4).map(|k| core.iter().map(|&c| a[k][c].powi(2)).sum::<f64>()).sum();
            (num / den).sqrt()
        };
        for order in [FormOrder::First, FormOrder::Second] {
            let (coarse, fine) = (gap(32, order), gap(64, order));
            eprintln!("{order:?}: relative gap {coarse:.3e} → {fine:.3e}");
            assert!(fine < coarse / 3.0, "{order:?}: {coarse} → {fine}");
        }
        assert!(gap(64, FormOrder::First) < 5e-2);
    }
}
