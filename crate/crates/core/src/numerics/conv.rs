//! Free-space (non-periodic) discrete convolution on an `n × n` lattice via
//! zero padding to `2n × 2n`.

use super::fft::Fft2;
use num_complex::Complex64;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

pub struct PaddedConvolver {
    n: usize,
    fft: Arc<Fft2>,
}

impl PaddedConvolver {
    pub fn new(n: usize) -> Self {
        Self { n, fft: Fft2::shared(2 * n) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Spectrum of lattice data embedded in the top-left corner of the padded buffer.
    pub fn spectrum(&self, data: &[f64]) -> Vec<Complex64> {
        let (n, m) = (self.n, 2 * self.n);
        assert_eq!(data.len(), n * n);
        let mut buf = vec![Complex64::new(0.0, 0.0); m * m];
        for row in 0..n {
            for col in 0..n {
                buf[row * m + col].re = data[row * n + col];
            }
        }
        self.fft.forward(&mut buf);
        buf
    }

    /// Spectrum of `kernel(dx, dy)` sampled at lattice offsets `(i h, j h)`, |i|, |j| < n.
    pub fn kernel_spectrum(&self, h: f64, kernel: impl Fn(f64, f64) -> f64) -> Vec<Complex64> {
        let (n, m) = (self.n as isize, 2 * self.n);
        let mut buf = vec![Complex64::new(0.0, 0.0); m * m];
        for j in (1 - n)..n {
            for i in (1 - n)..n {
                let row = j.rem_euclid(m as isize) as usize;
                let col = i.rem_euclid(m as isize) as usize;
                buf[row * m + col].re = kernel(i as f64 * h, j as f64 * h);
            }
        }
        self.fft.forward(&mut buf);
        buf
    }

    /// `out[c] = Σ_t Σ_{c'} K_t(y_c − y_{c'}) d_t[c']` for spectra pairs `(d_t, K_t)`.
    pub fn convolve(&self, pairs: &[(&[Complex64], &[Complex64])]) -> Vec<f64> {
        let (n, m) = (self.n, 2 * self.n);
        let mut buf = vec![Complex64::new(0.0, 0.0); m * m];
        for (data, kernel) in pairs {
            for ((b, d), k) in buf.iter_mut().zip(data.iter()).zip(kernel.iter()) {
                *b += d * k;
            }
        }
        self.fft.inverse(&mut buf);
        let mut out = vec![0.0; n * n];
        for row in 0..n {
            for col in 0..n {
                out[row * n + col] = buf[row * m + col].re;
            }
        }
        out
    }
}

/// Kernel spectra memoized by `(name, n, h)`.
pub fn cached_kernel(
    name: &'static str,
    conv: &PaddedConvolver,
    h: f64,
    kernel: impl Fn(f64, f64) -> f64,
) -> Arc<Vec<Complex64>> {
    type Key = (&'static str, usize, u64);
    static CACHE: OnceLock<Mutex<HashMap<Key, Arc<Vec<Complex64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (name, conv.n(), h.to_bits());
    if let Some(found) = cache.lock().expect("kernel cache poisoned").get(&key) {
        return found.clone();
    }
    let spec = Arc::new(conv.kernel_spectrum(h, kernel));
    cache.lock().expect("kernel cache poisoned").insert(key, spec.clone());
    spec
}
