//! Shared numerical building blocks.

pub mod conv;
pub mod fft;
pub mod interp;
pub mod quadrature;

use rayon::prelude::*;

/// Sum in index order, so the result does not depend on thread scheduling.
pub fn ordered_sum<I: IndexedParallelIterator<Item = f64>>(iter: I) -> f64 {
    iter.collect::<Vec<f64>>().iter().sum()
}

/// C^∞ step equal to 1 for `s ≤ 0` and 0 for `s ≥ 1`.
pub fn smooth_step(s: f64) -> f64 {
    fn psi(t: f64) -> f64 {
        if t > 0.0 {
            (-1.0 / t).exp()
        } else {
            0.0
        }
    }
    if s <= 0.0 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        let a = psi(1.0 - s);
        a / (a + psi(s))
    }
}

/// Derivative of [`smooth_step`].
pub fn smooth_step_slope(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        return 0.0;
    }
    let (a, b) = ((-1.0 / (1.0 - s)).exp(), (-1.0 / s).exp());
    let (da, db) = (-a / (1.0 - s).powi(2), b / (s * s));
    (da * b - a * db) / (a + b).powi(2)
}

#[cfg(test)]
mod tests {
    use super::{smooth_step, smooth_step_slope};

    #[test]
    fn smooth_step_is_monotone_with_unit_plateaus() {
        assert_eq!(smooth_step(-0.3), 1.0);
        assert_eq!(smooth_step(1.2), 0.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        let vals: Vec<f64> = (0..=100).map(|i| smooth_step(i as f64 / 100.0)).collect();
        assert!(vals.windows(2).all(|w| w[1] <= w[0]));
        for i in 1..50 {
            let s = i as f64 / 100.0;
            assert!((smooth_step(s) + smooth_step(1.0 - s) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn slope_matches_central_difference() {
        for i in 1..40 {
            let s = i as f64 / 40.0;
            let fd = (smooth_step(s + 1e-6) - smooth_step(s - 1e-6)) / 2e-6;
            assert!((smooth_step_slope(s) - fd).abs() < 1e-6, "s = {s}");
        }
    }
}
