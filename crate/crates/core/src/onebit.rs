//! 1-bit compressed sensing of the downlink CSI.
//!
//! The user keeps only the signs of the real and imaginary parts of
//! `h·Φ` and feeds them back together with the support mask. The base
//! station reconstructs with binary iterative hard thresholding in which
//! the usual top-S step is replaced by projection onto the fed-back support.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

/// Real `N×M` Gaussian measurement matrix, entries of variance `1/M`.
///
/// Both ends regenerate it from the shared seed.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix {
    /// Row-major, `entries[row * m + col]`.
    entries: Vec<f64>,
    n: usize,
    m: usize,
    seed: u64,
}

impl MeasurementMatrix {
    pub fn gaussian(n: usize, m: usize, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let scale = 1.0 / (m as f64).sqrt();
        let entries = (0..n * m)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        Self { entries, n, m, seed }
    }

    pub fn from_entries(n: usize, m: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * m {
            return Err(Error::dim("measurement matrix entries", n * m, entries.len()));
        }
        Ok(Self { entries, n, m, seed: 0 })
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self {
            entries,
            n,
            m: n,
            seed: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn compression_rate(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.m + col]
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.entries[r * self.m..(r + 1) * self.m]
    }

    /// `x·Φ` for a length-N row vector.
    pub fn project(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut re = vec![0.0; self.m];
        let mut im = vec![0.0; self.m];
        for (r, xr) in x.iter().enumerate() {
            let row = self.row(r);
            for ((a, b), &p) in re.iter_mut().zip(im.iter_mut()).zip(row) {
                *a += xr.re * p;
                *b += xr.im * p;
            }
        }
        re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect()
    }

    /// `y·Φᵀ` for a length-M row vector given as separate real/imag parts.
    fn back_project(&self, y_re: &[f64], y_im: &[f64], out: &mut [Complex64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = self.row(r);
            let mut a = 0.0;
            let mut b = 0.0;
            for ((&p, &u), &v) in row.iter().zip(y_re).zip(y_im) {
                a += p * u;
                b += p * v;
            }
            *o = Complex64::new(a, b);
        }
    }
}

/// Shape of a feedback bit stream: `support_len` support bits followed by
/// `m` real-part and `m` imaginary-part sign bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FvLayout {
    pub support_len: usize,
    pub m: usize,
}

impl FvLayout {
    pub fn k_total(&self) -> usize {
        self.support_len + 2 * self.m
    }
}

/// `[support | sign(Re(hΦ)) | sign(Im(hΦ))]` as 0/1 bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedbackVector {
    pub support_bits: Vec<u8>,
    pub p_real: Vec<u8>,
    pub p_imag: Vec<u8>,
}

fn check_bits(name: &str, bits: &[u8]) -> Result<()> {
    match bits.iter().position(|&b| b > 1) {
        Some(i) => Err(Error::InvalidArgument(format!(
            "{name}[{i}] = {} is not a bit",
            bits[i]
        ))),
        None => Ok(()),
    }
}

impl FeedbackVector {
    pub fn layout(&self) -> FvLayout {
        FvLayout {
            support_len: self.support_bits.len(),
            m: self.p_real.len(),
        }
    }

    pub fn k_total(&self) -> usize {
        self.layout().k_total()
    }

    /// Concatenated bit stream `w`.
    pub fn to_bits(&self) -> Vec<u8> {
        let mut w = Vec::with_capacity(self.k_total());
        w.extend_from_slice(&self.support_bits);
        w.extend_from_slice(&self.p_real);
        w.extend_from_slice(&self.p_imag);
        w
    }

    pub fn from_bits(w: &[u8], layout: FvLayout) -> Result<Self> {
        if w.len() != layout.k_total() {
            return Err(Error::dim("feedback vector", layout.k_total(), w.len()));
        }
        let (z, rest) = w.split_at(layout.support_len);
        let (pr, pi) = rest.split_at(layout.m);
        assemble_fv(z, pr, pi)
    }
}

pub fn assemble_fv(z: &[u8], p_real: &[u8], p_imag: &[u8]) -> Result<FeedbackVector> {
    if p_real.len() != p_imag.len() {
        return Err(Error::dim("p_imag", p_real.len(), p_imag.len()));
    }
    check_bits("support", z)?;
    check_bits("p_real", p_real)?;
    check_bits("p_imag", p_imag)?;
    Ok(FeedbackVector {
        support_bits: z.to_vec(),
        p_real: p_real.to_vec(),
        p_imag: p_imag.to_vec(),
    })
}

pub fn split_fv(fv: &FeedbackVector) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    (fv.support_bits.clone(), fv.p_real.clone(), fv.p_imag.clone())
}

/// Feedback encoding of the sign: 1 for positive, 0 otherwise.
#[inline]
fn sign_bit(x: f64) -> u8 {
    u8::from(x > 0.0)
}

/// Two-valued sign used inside the iterations, `sgn(0) = +1`.
#[inline]
fn sgn_pm(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn bit_to_pm(b: u8) -> f64 {
    2.0 * b as f64 - 1.0
}

pub fn quantize(h: &[Complex64], phi: &MeasurementMatrix, support: &[u8]) -> Result<FeedbackVector> {
    if h.len() != phi.n() {
        return Err(Error::dim("downlink CSI", phi.n(), h.len()));
    }
    if support.len() != phi.n() {
        return Err(Error::dim("support", phi.n(), support.len()));
    }
    check_bits("support", support)?;
    let y = phi.project(h);
    Ok(FeedbackVector {
        support_bits: support.to_vec(),
        p_real: y.iter().map(|c| sign_bit(c.re)).collect(),
        p_imag: y.iter().map(|c| sign_bit(c.im)).collect(),
    })
}

/// Measurement signs `p_real`, `p_imag` that `estimate` reproduces.
pub fn sign_consistency(estimate: &[Complex64], fv: &FeedbackVector, phi: &MeasurementMatrix) -> usize {
    let y = phi.project(estimate);
    y.iter()
        .zip(fv.p_real.iter().zip(&fv.p_imag))
        .map(|(c, (&r, &i))| usize::from(sgn_pm(c.re) == bit_to_pm(r)) + usize::from(sgn_pm(c.im) == bit_to_pm(i)))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub amplitude: Vec<f64>,
    /// In `(-π, π]`.
    pub angle: Vec<f64>,
    pub iterations_used: usize,
    pub flops: u64,
}

impl ReconstructionResult {
    pub fn estimate(&self) -> Vec<Complex64> {
        self.amplitude
            .iter()
            .zip(&self.angle)
            .map(|(&a, &t)| Complex64::from_polar(a, t))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BihtOptions {
    pub iterations: usize,
    pub step: f64,
    /// Rescale the iterate to unit norm after every step, not only at the end.
    pub normalize_each_iteration: bool,
}

impl BihtOptions {
    pub fn new(iterations: usize) -> Self {
        Self {
            iterations,
            step: 1.0,
            normalize_each_iteration: false,
        }
    }
}

/// How the iterate is confined after every gradient step.
#[derive(Debug, Clone, Copy)]
enum Projection<'a> {
    Support(&'a [u8]),
    TopS(usize),
}

impl Projection<'_> {
    fn apply(&self, a: &mut [Complex64]) {
        match *self {
            Projection::Support(mask) => {
                for (x, &z) in a.iter_mut().zip(mask) {
                    if z == 0 {
                        *x = Complex64::new(0.0, 0.0);
                    }
                }
            }
            Projection::TopS(s) => {
                let mut order: Vec<usize> = (0..a.len()).collect();
                order.sort_by(|&i, &j| a[j].norm_sqr().total_cmp(&a[i].norm_sqr()));
                for &i in &order[s.min(a.len())..] {
                    a[i] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }
}

fn normalize(a: &mut [Complex64]) -> Result<()> {
    let norm = a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateReconstruction);
    }
    a.iter_mut().for_each(|c| *c /= norm);
    Ok(())
}

fn biht(
    p_real: &[u8],
    p_imag: &[u8],
    phi: &MeasurementMatrix,
    proj: Projection<'_>,
    opts: &BihtOptions,
) -> Result<Vec<Complex64>> {
    let m = phi.m();
    if p_real.len() != m {
        return Err(Error::dim("p_real", m, p_real.len()));
    }
    if p_imag.len() != m {
        return Err(Error::dim("p_imag", m, p_imag.len()));
    }
    let b_re: Vec<f64> = p_real.iter().map(|&b| bit_to_pm(b)).collect();
    let b_im: Vec<f64> = p_imag.iter().map(|&b| bit_to_pm(b)).collect();

    let mut a = vec![Complex64::new(0.0, 0.0); phi.n()];
    phi.back_project(&b_re, &b_im, &mut a);
    proj.apply(&mut a);

    let half_step = opts.step / 2.0;
    let mut e_re = vec![0.0; m];
    let mut e_im = vec![0.0; m];
    let mut grad = vec![Complex64::new(0.0, 0.0); phi.n()];
    for _ in 0..opts.iterations {
        let y = phi.project(&a);
        for i in 0..m {
            e_re[i] = b_re[i] - sgn_pm(y[i].re);
            e_im[i] = b_im[i] - sgn_pm(y[i].im);
        }
        phi.back_project(&e_re, &e_im, &mut grad);
        for (x, g) in a.iter_mut().zip(&grad) {
            *x += g * half_step;
        }
        proj.apply(&mut a);
        if opts.normalize_each_iteration {
            normalize(&mut a)?;
        }
    }
    normalize(&mut a)?;
    Ok(a)
}

fn polar_parts(a: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    let amplitude = a.iter().map(|c| c.norm()).collect();
    let angle = a
        .iter()
        .map(|c| {
            let t = c.arg();
            if t <= -std::f64::consts::PI {
                std::f64::consts::PI
            } else {
                t
            }
        })
        .collect();
    (amplitude, angle)
}

/// Support-aided BIHT with `iterations` steps of size `step`.
pub fn sca_biht(
    fv: &FeedbackVector,
    phi: &MeasurementMatrix,
    iterations: usize,
    step: f64,
) -> Result<ReconstructionResult> {
    sca_biht_with(
        fv,
        phi,
        &BihtOptions {
            step,
            ..BihtOptions::new(iterations)
        },
    )
}

pub fn sca_biht_with(fv: &FeedbackVector, phi: &MeasurementMatrix, opts: &BihtOptions) -> Result<ReconstructionResult> {
    if fv.support_bits.len() != phi.n() {
        return Err(Error::dim("support", phi.n(), fv.support_bits.len()));
    }
    if fv.support_bits.iter().all(|&z| z == 0) {
        return Err(Error::EmptySupport);
    }
    let a = biht(&fv.p_real, &fv.p_imag, phi, Projection::Support(&fv.support_bits), opts)?;
    let (amplitude, angle) = polar_parts(&a);
    Ok(ReconstructionResult {
        amplitude,
        angle,
        iterations_used: opts.iterations,
        flops: sca_biht_flops(phi.m(), phi.n(), opts.iterations),
    })
}

/// Plain BIHT keeping the `sparsity` largest entries, no support side
/// information. Stands in for the TDM 1-bit CS reference decoder.
pub fn biht_top_s(
    p_real: &[u8],
    p_imag: &[u8],
    phi: &MeasurementMatrix,
    sparsity: usize,
    opts: &BihtOptions,
) -> Result<ReconstructionResult> {
    if sparsity == 0 || sparsity > phi.n() {
        return Err(Error::InvalidArgument(format!(
            "sparsity {sparsity} out of range 1..={}",
            phi.n()
        )));
    }
    let a = biht(p_real, p_imag, phi, Projection::TopS(sparsity), opts)?;
    let (amplitude, angle) = polar_parts(&a);
    Ok(ReconstructionResult {
        amplitude,
        angle,
        iterations_used: opts.iterations,
        flops: biht_top_s_flops(phi.m(), phi.n(), opts.iterations),
    })
}

/// `4MN` per iteration.
pub fn sca_biht_flops(m: usize, n: usize, iterations: usize) -> u64 {
    4 * (m as u64) * (n as u64) * iterations as u64
}

/// `4(M+1)N` per iteration.
pub fn biht_top_s_flops(m: usize, n: usize, iterations: usize) -> u64 {
    4 * (m as u64 + 1) * (n as u64) * iterations as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn quantize_identity_measurement() {
        let h = [c(1.0, -1.0), c(-2.0, 3.0)];
        let fv = quantize(&h, &MeasurementMatrix::identity(2), &[1, 1]).unwrap();
        assert_eq!(fv.p_real, vec![1, 0]);
        assert_eq!(fv.p_imag, vec![0, 1]);
        assert_eq!(fv.support_bits, vec![1, 1]);

        let zero = quantize(&[c(0.0, 0.0); 2], &MeasurementMatrix::identity(2), &[1, 1]).unwrap();
        assert_eq!(zero.p_real, vec![0, 0]);
        assert_eq!(zero.p_imag, vec![0, 0]);
    }

    #[test]
    fn quantize_dimension_errors() {
        let phi = MeasurementMatrix::gaussian(4, 8, 1);
        assert!(quantize(&[c(1.0, 0.0); 3], &phi, &[1, 0, 0, 0]).is_err());
        assert!(quantize(&[c(1.0, 0.0); 4], &phi, &[1, 0, 0]).is_err());
    }

    #[test]
    fn assemble_order_and_lengths() {
        let fv = assemble_fv(&[1, 0], &[1, 0], &[0, 1]).unwrap();
        assert_eq!(fv.to_bits(), vec![1, 0, 1, 0, 0, 1]);
        assert_eq!(fv.k_total(), 6);
        let back = FeedbackVector::from_bits(&fv.to_bits(), fv.layout()).unwrap();
        assert_eq!(split_fv(&back), (vec![1, 0], vec![1, 0], vec![0, 1]));

        let layout = FvLayout {
            support_len: 64,
            m: 128,
        };
        assert_eq!(layout.k_total(), 320);

        assert!(assemble_fv(&[1], &[1, 0], &[1]).is_err());
        assert!(assemble_fv(&[2], &[1], &[1]).is_err());
        assert!(FeedbackVector::from_bits(&[1, 0, 1], layout).is_err());
    }

    #[test]
    fn measurement_matrix_statistics() {
        let (n, m) = (64, 128);
        let phi = MeasurementMatrix::gaussian(n, m, 5);
        assert_eq!(phi, MeasurementMatrix::gaussian(n, m, 5));
        assert_eq!(phi.compression_rate(), 2.0);
        let vals: Vec<f64> = (0..n)
            .flat_map(|r| (0..m).map(move |c| (r, c)))
            .map(|(r, c)| phi.get(r, c))
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 0.01);
        assert!((var * m as f64 - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn zero_iterations_is_normalized_masked_back_projection() {
        let (n, m) = (8, 16);
        let phi = MeasurementMatrix::gaussian(n, m, 2);
        let mut h = vec![c(0.0, 0.0); n];
        h[1] = c(0.6, 0.0);
        h[5] = c(0.0, -0.8);
        let support = [0, 1, 0, 0, 0, 1, 0, 0];
        let fv = quantize(&h, &phi, &support).unwrap();
        let res = sca_biht(&fv, &phi, 0, 1.0).unwrap();

        // straight-line reference
        let mut a = vec![c(0.0, 0.0); n];
        for r in 0..n {
            if support[r] == 1 {
                for i in 0..m {
                    let b = c(2.0 * fv.p_real[i] as f64 - 1.0, 2.0 * fv.p_imag[i] as f64 - 1.0);
                    a[r] += b * phi.get(r, i);
                }
            }
        }
        let norm = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        for (got, want) in res.estimate().iter().zip(&a) {
            assert!((got - want / norm).norm() < 1e-12);
        }
        assert_eq!(res.flops, 0);
    }

    #[test]
    fn reconstruction_invariants() {
        let (n, m) = (16, 32);
        let phi = MeasurementMatrix::gaussian(n, m, 9);
        let mut h = vec![c(0.0, 0.0); n];
        h[2] = c(0.5, 0.5);
        h[9] = c(-0.5, 0.5);
        let mut support = vec![0u8; n];
        support[2] = 1;
        support[9] = 1;
        let fv = quantize(&h, &phi, &support).unwrap();
        let res = sca_biht(&fv, &phi, 5, 1.0).unwrap();
        let norm: f64 = res.amplitude.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        for (i, (&a, &t)) in res.amplitude.iter().zip(&res.angle).enumerate() {
            assert!(a >= 0.0);
            assert!(t > -PI && t <= PI);
            if support[i] == 0 {
                assert_eq!(a, 0.0);
            }
        }
        assert_eq!(res.iterations_used, 5);
    }

    #[test]
    fn empty_support_and_degenerate() {
        let phi = MeasurementMatrix::gaussian(4, 8, 1);
        let fv = assemble_fv(&[0; 4], &[1; 8], &[0; 8]).unwrap();
        assert!(matches!(sca_biht(&fv, &phi, 3, 1.0), Err(Error::EmptySupport)));

        let zero = MeasurementMatrix::from_entries(2, 2, vec![0.0; 4]).unwrap();
        let fv = assemble_fv(&[1, 1], &[1, 1], &[1, 1]).unwrap();
        assert!(matches!(
            sca_biht(&fv, &zero, 0, 1.0),
            Err(Error::DegenerateReconstruction)
        ));
    }

    #[test]
    fn flop_counter() {
        let phi = MeasurementMatrix::gaussian(64, 128, 1);
        let mut h = vec![c(0.0, 0.0); 64];
        h[3] = c(1.0, 0.0);
        let mut z = vec![0u8; 64];
        z[3] = 1;
        let fv = quantize(&h, &phi, &z).unwrap();
        assert_eq!(sca_biht(&fv, &phi, 5, 1.0).unwrap().flops, 163_840);
        assert_eq!(sca_biht_flops(128, 64, 5), 5 * 4 * 128 * 64);
        let r1 = biht_top_s(&fv.p_real, &fv.p_imag, &phi, 1, &BihtOptions::new(100)).unwrap();
        assert_eq!(r1.flops, 4 * 129 * 64 * 100);
    }

    #[test]
    fn top_s_keeps_s_entries() {
        let phi = MeasurementMatrix::gaussian(32, 64, 3);
        let mut h = vec![c(0.0, 0.0); 32];
        h[4] = c(0.8, 0.0);
        h[20] = c(0.0, 0.6);
        let fv = quantize(&h, &phi, &[1; 32]).unwrap();
        let res = biht_top_s(&fv.p_real, &fv.p_imag, &phi, 2, &BihtOptions::new(10)).unwrap();
        assert_eq!(res.amplitude.iter().filter(|&&a| a > 0.0).count(), 2);
    }
}
