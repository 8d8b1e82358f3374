//! Seventh-order periodic Lagrange interpolation on a uniform square grid.
//!
//! The stencil is centered on the nearest node, so the error is odd in the
//! offset and the interpolant is smooth under small shifts of the sample point.

use crate::geometry::Vec2;

/// Uniform periodic grid geometry: nodes at `origin + i·h`, `i ∈ 0..n`.
#[derive(Debug, Clone, Copy)]
pub struct PeriodicLattice {
    pub n: usize,
    pub h: f64,
    pub origin: f64,
}

impl PeriodicLattice {
    /// Nearest node index and 7 weights along one axis.
    #[inline]
    fn axis(&self, coord: f64) -> (isize, [f64; 7]) {
        let s = (coord - self.origin) / self.h;
        let base = s.round();
        let t = s - base;
        (base as isize, lagrange7(t))
    }

    pub fn interpolate(&self, values: &[f64], p: Vec2) -> f64 {
        let n = self.n as isize;
        let (bx, wx) = self.axis(p.x);
        let (by, wy) = self.axis(p.y);
        let mut acc = 0.0;
        for (b, wyb) in wy.iter().enumerate() {
            let row = (by + b as isize - 3).rem_euclid(n) as usize * self.n;
            let mut line = 0.0;
            for (a, wxa) in wx.iter().enumerate() {
                let col = (bx + a as isize - 3).rem_euclid(n) as usize;
                line += wxa * values[row + col];
            }
            acc += wyb * line;
        }
        acc
    }
}

/// Weights of the 7-point Lagrange basis at offsets −3..=3 evaluated at `t ∈ [−½, ½]`.
#[inline]
fn lagrange7(t: f64) -> [f64; 7] {
    let mut w = [0.0; 7];
    for (j, wj) in w.iter_mut().enumerate() {
        let xj = j as f64 - 3.0;
        let mut num = 1.0;
        let mut den = 1.0;
        for m in 0..7 {
            if m != j {
                let xm = m as f64 - 3.0;
                num *= t - xm;
                den *= xj - xm;
            }
        }
        *wj = num / den;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::vec2;

    #[test]
    fn reproduces_nodes_and_smooth_fields() {
        let n = 64;
        let lat = PeriodicLattice { n, h: 2.0 * std::f64::consts::PI / n as f64, origin: -std::f64::consts::PI };
        let f = |x: f64, y: f64| (x).sin() * (2.0 * y).cos();
        let vals: Vec<f64> = (0..n * n)
            .map(|idx| f(lat.origin + (idx % n) as f64 * lat.h, lat.origin + (idx / n) as f64 * lat.h))
            .collect();
        let node = vec2(lat.origin + 5.0 * lat.h, lat.origin + 9.0 * lat.h);
        assert!((lat.interpolate(&vals, node) - vals[9 * n + 5]).abs() < 1e-14);
        for p in [vec2(0.123, -1.7), vec2(3.0, 2.9), vec2(-3.1, 0.5)] {
            assert!((lat.interpolate(&vals, p) - f(p.x, p.y)).abs() < 1e-7);
        }
    }

    #[test]
    fn error_is_odd_in_small_shifts() {
        let n = 32;
        let lat = PeriodicLattice { n, h: 2.0 * std::f64::consts::PI / n as f64, origin: -std::f64::consts::PI };
        let vals: Vec<f64> = (0..n * n).map(|idx| (3.0 * (lat.origin + (idx % n) as f64 * lat.h)).sin()).collect();
        let node = vec2(lat.origin + 7.0 * lat.h, lat.origin);
        for s in [1e-3, 1e-2, 0.1] {
            let err = |d: f64| lat.interpolate(&vals, node + vec2(d * lat.h, 0.0)) - (3.0 * (node.x + d * lat.h)).sin();
            assert!((err(s) + err(-s)).abs() < s * err(s).abs(), "{s}: {} {}", err(s), err(-s));
        }
    }
}
