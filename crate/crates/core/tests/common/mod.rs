//! Straight-line reference computations shared by the integration tests.
#![allow(dead_code)]

use num_complex::Complex64;
use superfeed::onebit::MeasurementMatrix;

/// `x·Φ` with explicit loops.
pub fn project(x: &[Complex64], phi: &MeasurementMatrix) -> Vec<Complex64> {
    (0..phi.m())
        .map(|j| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, xi) in x.iter().enumerate() {
                acc += xi * phi.get(i, j);
            }
            acc
        })
        .collect()
}

/// `1` for nonnegative, `0` for negative.
pub fn sign_bit(v: f64) -> u8 {
    u8::from(v >= 0.0)
}

/// Number of real and imaginary measurement signs of `x·Φ` that agree with
/// the given bits.
pub fn consistency(x: &[Complex64], phi: &MeasurementMatrix, p_real: &[u8], p_imag: &[u8]) -> usize {
    let y = project(x, phi);
    y.iter()
        .zip(p_real.iter().zip(p_imag))
        .map(|(v, (&r, &i))| usize::from(sign_bit(v.re) == r) + usize::from(sign_bit(v.im) == i))
        .sum()
}

pub fn nmse(truth: &[Complex64], est: &[Complex64]) -> f64 {
    let err: f64 = truth.iter().zip(est).map(|(a, b)| (a - b).norm_sqr()).sum();
    let pow: f64 = truth.iter().map(|a| a.norm_sqr()).sum();
    err / pow
}

pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Unitary DFT by the definition, `X[k] = N^{-1/2} Σ x[n] e^{-2πi kn/N}`.
pub fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    let scale = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(i, v)| v * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64))
                .sum::<Complex64>()
                * scale
        })
        .collect()
}
