use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Square two-dimensional FFT over row-major `n × n` buffers.
pub struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    /// Plan shared across the process for size `n`.
    pub fn shared(n: usize) -> Arc<Fft2> {
        static PLANS: OnceLock<Mutex<HashMap<usize, Arc<Fft2>>>> = OnceLock::new();
        let plans = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = plans.lock().expect("fft plan cache poisoned");
        guard.entry(n).or_insert_with(|| Arc::new(Fft2::new(n))).clone()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalized forward transform, `Σ f e^{-2πi(k·j)/n}`.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.apply(&self.fwd, data);
    }

    /// Inverse transform including the `1/n²` factor.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.apply(&self.inv, data);
        let scale = 1.0 / (self.n * self.n) as f64;
        data.iter_mut().for_each(|z| *z *= scale);
    }

    fn apply(&self, plan: &Arc<dyn Fft<f64>>, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.n * self.n, "buffer is not n×n");
        plan.process(data);
        transpose(data, self.n);
        plan.process(data);
        transpose(data, self.n);
    }
}

fn transpose(data: &mut [Complex64], n: usize) {
    for r in 0..n {
        for c in (r + 1)..n {
            data.swap(r * n + c, c * n + r);
        }
    }
}

/// Signed integer frequency of FFT bin `m` on an `n`-point grid.
#[inline]
pub fn signed_freq(m: usize, n: usize) -> i64 {
    if m <= n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

pub fn to_complex(values: &[f64]) -> Vec<Complex64> {
    values.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

pub fn real_parts(values: &[Complex64]) -> Vec<f64> {
    values.iter().map(|z| z.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_restores_input() {
        let n = 12;
        let fft = Fft2::new(n);
        let orig: Vec<Complex64> =
            (0..n * n).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64).cos())).collect();
        let mut buf = orig.clone();
        fft.forward(&mut buf);
        fft.inverse(&mut buf);
        for (a, b) in orig.iter().zip(&buf) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn single_mode_lands_in_one_bin() {
        let n = 8;
        let fft = Fft2::new(n);
        // e^{2πi(2 x + 1 y)/n} with x the column index
        let mut buf: Vec<Complex64> = (0..n * n)
            .map(|idx| {
                let (row, col) = (idx / n, idx % n);
                let phase = 2.0 * std::f64::consts::PI * (2.0 * col as f64 + row as f64) / n as f64;
                Complex64::from_polar(1.0, phase)
            })
            .collect();
        fft.forward(&mut buf);
        for (idx, z) in buf.iter().enumerate() {
            let expected = if idx == n + 2 { (n * n) as f64 } else { 0.0 };
            assert!((z.norm() - expected).abs() < 1e-9, "bin {idx}");
        }
    }

    #[test]
    fn signed_frequencies() {
        assert_eq!(signed_freq(0, 8), 0);
        assert_eq!(signed_freq(4, 8), 4);
        assert_eq!(signed_freq(5, 8), -3);
    }
}
