//! Spread-spectrum superimposed uplink.
//!
//! The feedback bits are QPSK-modulated, spread over `P` chips with Walsh
//! columns, power-shared with the uplink user data, sent through a
//! single-antenna-to-`N`-antenna flat channel and detected at the base
//! station by MRC combining, despreading and one pass of successive
//! interference cancellation.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::onebit::{FeedbackVector, FvLayout};
use crate::rng::SimRng;

/// Tag written next to every result: SNR is `E/σ²` per receive antenna,
/// with the uplink channel at unit mean power per antenna.
pub const SNR_DEFINITION: &str = "E_over_sigma2_per_antenna";

pub fn noise_variance(energy: f64, snr_db: f64) -> f64 {
    energy / 10f64.powf(snr_db / 10.0)
}

/// Gray-mapped QPSK: `(b0, b1) -> ((1-2b0) + j(1-2b1))/√2`.
/// Odd inputs are padded with one zero bit.
pub fn qpsk_modulate(bits: &[u8]) -> Vec<Complex64> {
    bits.chunks(2)
        .map(|pair| {
            let b0 = pair[0] as f64;
            let b1 = pair.get(1).copied().unwrap_or(0) as f64;
            Complex64::new(1.0 - 2.0 * b0, 1.0 - 2.0 * b1) * FRAC_1_SQRT_2
        })
        .collect()
}

/// Quadrant decision, two bits per symbol.
pub fn qpsk_demodulate(symbols: &[Complex64]) -> Vec<u8> {
    symbols
        .iter()
        .flat_map(|s| [u8::from(s.re < 0.0), u8::from(s.im < 0.0)])
        .collect()
}

/// Unit-power QPSK user data: `(bits, symbols)`.
pub fn random_qpsk(len: usize, rng: &mut SimRng) -> (Vec<u8>, Vec<Complex64>) {
    let bits: Vec<u8> = (0..2 * len).map(|_| u8::from(rng.random::<bool>())).collect();
    let symbols = qpsk_modulate(&bits);
    (bits, symbols)
}

/// `P×T` selection of Sylvester–Hadamard columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpreadingMatrix {
    /// Row-major `P×T`, entries ±1.
    entries: Vec<i8>,
    columns: Vec<usize>,
    p_len: usize,
    t_len: usize,
}

#[inline]
fn hadamard_entry(row: usize, col: usize) -> i8 {
    if (row & col).count_ones().is_multiple_of(2) {
        1
    } else {
        -1
    }
}

impl SpreadingMatrix {
    /// Picks `t` distinct columns of `H_p` by a seeded shuffle.
    pub fn build(p: usize, t: usize, seed: u64) -> Result<Self> {
        check_dims(p, t)?;
        let mut cols: Vec<usize> = (0..p).collect();
        let mut rng = crate::rng::seeded(seed);
        // partial Fisher–Yates over the first t slots
        for i in 0..t {
            let j = rng.random_range(i..p);
            cols.swap(i, j);
        }
        cols.truncate(t);
        Self::with_columns(p, &cols)
    }

    pub fn with_columns(p: usize, columns: &[usize]) -> Result<Self> {
        let t = columns.len();
        check_dims(p, t)?;
        let mut seen = vec![false; p];
        for &c in columns {
            if c >= p || seen[c] {
                return Err(Error::InvalidArgument(format!(
                    "column {c} is out of range or repeated"
                )));
            }
            seen[c] = true;
        }
        let mut entries = Vec::with_capacity(p * t);
        for row in 0..p {
            entries.extend(columns.iter().map(|&c| hadamard_entry(row, c)));
        }
        let q = Self {
            entries,
            columns: columns.to_vec(),
            p_len: p,
            t_len: t,
        };
        if !q.is_orthogonal() {
            return Err(Error::InvalidArgument("spreading columns are not orthogonal".into()));
        }
        Ok(q)
    }

    pub fn p_len(&self) -> usize {
        self.p_len
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.entries[row * self.t_len + col]
    }

    /// `QᵀQ` in exact integer arithmetic, row-major `T×T`.
    pub fn gram(&self) -> Vec<i64> {
        let t = self.t_len;
        let mut g = vec![0i64; t * t];
        for row in self.entries.chunks_exact(t) {
            for i in 0..t {
                let a = row[i] as i64;
                for j in 0..t {
                    g[i * t + j] += a * row[j] as i64;
                }
            }
        }
        g
    }

    /// `QᵀQ == P·I_T`.
    pub fn is_orthogonal(&self) -> bool {
        let t = self.t_len;
        let p = self.p_len as i64;
        self.gram()
            .iter()
            .enumerate()
            .all(|(k, &v)| v == if k / t == k % t { p } else { 0 })
    }

    /// `r·Qᵀ` (length P).
    pub fn spread(&self, r: &[Complex64]) -> Vec<Complex64> {
        self.entries
            .chunks_exact(self.t_len)
            .map(|row| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (&q, x) in row.iter().zip(r) {
                    acc += x * q as f64;
                }
                acc
            })
            .collect()
    }

    /// `y·Q` (length T).
    pub fn despread(&self, y: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.t_len];
        for (row, yp) in self.entries.chunks_exact(self.t_len).zip(y) {
            for (o, &q) in out.iter_mut().zip(row) {
                *o += yp * q as f64;
            }
        }
        out
    }
}

fn check_dims(p: usize, t: usize) -> Result<()> {
    if p == 0 || !p.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("P must be a power of two, got {p}")));
    }
    if t == 0 || t > p {
        return Err(Error::InvalidArgument(format!("need 1 <= T <= P, got T={t}, P={p}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxMode {
    /// Feedback power-shared with user data.
    Superimposed,
    /// Feedback alone on dedicated resources.
    Tdm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxConfig {
    /// Share of transmit power spent on feedback; ignored in TDM mode.
    pub rho: f64,
    /// Per-sample transmit power.
    pub energy: f64,
    pub p_len: usize,
    pub mode: TxMode,
}

impl TxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidConfig(format!(
                "rho must lie in [0, 1], got {}",
                self.rho
            )));
        }
        if !(self.energy > 0.0 && self.energy.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "energy must be positive, got {}",
                self.energy
            )));
        }
        Ok(())
    }

    /// Amplitude applied to the spread feedback.
    fn feedback_amplitude(&self) -> f64 {
        match self.mode {
            TxMode::Superimposed => (self.rho * self.energy).sqrt(),
            TxMode::Tdm => self.energy.sqrt(),
        }
    }

    /// Amplitude applied to the user data; zero in TDM mode.
    fn data_amplitude(&self) -> f64 {
        match self.mode {
            TxMode::Superimposed => ((1.0 - self.rho) * self.energy).sqrt(),
            TxMode::Tdm => 0.0,
        }
    }
}

/// `x = √(ρE)·s + √((1−ρ)E)·d` with `s = r·Qᵀ/√T`; TDM sends `√E·s`.
pub fn transmit(
    fv_symbols: &[Complex64],
    ulus: Option<&[Complex64]>,
    q: &SpreadingMatrix,
    cfg: &TxConfig,
) -> Result<Vec<Complex64>> {
    cfg.validate()?;
    let (p, t) = (q.p_len(), q.t_len());
    if cfg.p_len != p {
        return Err(Error::dim("spreading length", cfg.p_len, p));
    }
    if fv_symbols.len() != t {
        return Err(Error::dim("feedback symbols", t, fv_symbols.len()));
    }
    let inv_sqrt_t = 1.0 / (t as f64).sqrt();
    let a_fb = cfg.feedback_amplitude() * inv_sqrt_t;
    let mut x: Vec<Complex64> = q.spread(fv_symbols).into_iter().map(|c| c * a_fb).collect();

    if cfg.mode == TxMode::Superimposed {
        if p <= t {
            return Err(Error::InvalidConfig(format!(
                "superimposed mode needs P > T, got P={p}, T={t}"
            )));
        }
        let d = ulus.ok_or_else(|| Error::InvalidArgument("superimposed mode needs user data".into()))?;
        if d.len() != p {
            return Err(Error::dim("user data", p, d.len()));
        }
        let a_d = cfg.data_amplitude();
        for (xi, di) in x.iter_mut().zip(d) {
            *xi += di * a_d;
        }
    }
    Ok(x)
}

/// Received block, row-major `N×P`.
#[derive(Debug, Clone, PartialEq)]
pub struct RxBlock {
    pub n: usize,
    pub p: usize,
    pub data: Vec<Complex64>,
}

impl RxBlock {
    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }
}

/// `Y = g·x + noise`, noise circular Gaussian with variance `σ²` per entry.
pub fn channel_apply(tx: &[Complex64], g: &[Complex64], noise_var: f64, rng: &mut SimRng) -> RxBlock {
    let sd = (noise_var.max(0.0) / 2.0).sqrt();
    let (n, p) = (g.len(), tx.len());
    let mut data = Vec::with_capacity(n * p);
    for gi in g {
        for x in tx {
            let mut y = gi * x;
            if sd > 0.0 {
                let nr: f64 = rng.sample(StandardNormal);
                let ni: f64 = rng.sample(StandardNormal);
                y += Complex64::new(nr * sd, ni * sd);
            }
            data.push(y);
        }
    }
    RxBlock { n, p, data }
}

/// Everything the receiver recovers from one block.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub fv: FeedbackVector,
    /// `None` when no user data was superimposed (TDM, or `ρ = 1`).
    pub ulus_bits: Option<Vec<u8>>,
    /// Soft despread feedback symbols `r̃`.
    pub fv_symbols: Vec<Complex64>,
    /// MRC output `y`.
    pub combined: Vec<Complex64>,
    /// `y` after the re-spread feedback is cancelled, scaled to unit data power.
    pub residual: Option<Vec<Complex64>>,
}

/// MRC combining, despreading, hard FV detection and one SIC pass.
pub fn receive(
    rx: &RxBlock,
    g: &[Complex64],
    q: &SpreadingMatrix,
    cfg: &TxConfig,
    layout: FvLayout,
) -> Result<Detection> {
    receive_sic(rx, g, q, cfg, layout, 1)
}

/// [`receive`] with `passes` rounds of cancellation. Each pass after the
/// first subtracts the previous user-data decisions from the combined
/// signal before despreading the feedback again, then repeats the
/// feedback cancellation and data decision.
pub fn receive_sic(
    rx: &RxBlock,
    g: &[Complex64],
    q: &SpreadingMatrix,
    cfg: &TxConfig,
    layout: FvLayout,
    passes: usize,
) -> Result<Detection> {
    cfg.validate()?;
    if passes == 0 {
        return Err(Error::InvalidArgument("at least one detection pass is required".into()));
    }
    if g.len() != rx.n {
        return Err(Error::dim("uplink channel", rx.n, g.len()));
    }
    if rx.p != q.p_len() {
        return Err(Error::dim("received block width", q.p_len(), rx.p));
    }
    let k = layout.k_total();
    if k > 2 * q.t_len() {
        return Err(Error::InvalidConfig(format!(
            "{k} feedback bits do not fit in {} QPSK symbols",
            q.t_len()
        )));
    }
    let g_energy: f64 = g.iter().map(|c| c.norm_sqr()).sum();
    if g_energy <= 0.0 {
        return Err(Error::InvalidArgument("uplink channel is all zero".into()));
    }
    let a_fb = cfg.feedback_amplitude();
    if a_fb <= 0.0 {
        return Err(Error::InvalidConfig("rho = 0 leaves no feedback power".into()));
    }

    let mut combined = vec![Complex64::new(0.0, 0.0); rx.p];
    for (i, gi) in g.iter().enumerate() {
        let w = gi.conj() / g_energy;
        for (y, r) in combined.iter_mut().zip(rx.row(i)) {
            *y += w * r;
        }
    }

    let (p, t) = (q.p_len() as f64, q.t_len() as f64);
    let scale = t.sqrt() / (p * a_fb);
    let a_s = a_fb / t.sqrt();
    let a_d = cfg.data_amplitude();
    let mut fv_symbols = Vec::new();
    let mut bits = Vec::new();
    let mut ulus_bits: Option<Vec<u8>> = None;
    let mut residual = None;
    for pass in 0..passes {
        let target: Vec<Complex64> = match (&ulus_bits, pass) {
            (Some(d), p) if p > 0 => combined
                .iter()
                .zip(qpsk_modulate(d))
                .map(|(y, d)| y - d * a_d)
                .collect(),
            _ => combined.clone(),
        };
        fv_symbols = q.despread(&target).into_iter().map(|c| c * scale).collect();
        bits = qpsk_demodulate(&fv_symbols);
        if a_d > 0.0 {
            let respread = q.spread(&qpsk_modulate(&bits));
            let res: Vec<Complex64> = combined
                .iter()
                .zip(&respread)
                .map(|(y, s)| (y - s * a_s) / a_d)
                .collect();
            ulus_bits = Some(qpsk_demodulate(&res));
            residual = Some(res);
        } else {
            break;
        }
    }
    bits.truncate(k);
    let fv = FeedbackVector::from_bits(&bits, layout)?;

    Ok(Detection {
        fv,
        ulus_bits,
        fv_symbols,
        combined,
        residual,
    })
}

pub fn bit_errors(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn qpsk_mapping() {
        let s = qpsk_modulate(&[0, 0]);
        assert!((s[0] - c(1.0, 1.0) * FRAC_1_SQRT_2).norm() < 1e-15);
        assert_eq!(qpsk_modulate(&vec![0u8; 320]).len(), 160);
        assert_eq!(qpsk_modulate(&[1, 0, 1]).len(), 2);
        assert_eq!(qpsk_demodulate(&[c(0.9, 0.8) * FRAC_1_SQRT_2]), vec![0, 0]);
        assert_eq!(
            qpsk_demodulate(&qpsk_modulate(&[1, 0, 0, 1, 1, 1])),
            vec![1, 0, 0, 1, 1, 1]
        );
        let odd = qpsk_demodulate(&qpsk_modulate(&[1, 1, 1]));
        assert_eq!(&odd[..3], &[1, 1, 1]);
    }

    #[test]
    fn hadamard_four_by_two() {
        let q = SpreadingMatrix::with_columns(4, &[0, 1]).unwrap();
        let want = [[1, 1], [1, -1], [1, 1], [1, -1]];
        for (r, row) in want.iter().enumerate() {
            for (col, &v) in row.iter().enumerate() {
                assert_eq!(q.get(r, col), v);
            }
        }
        assert_eq!(q.gram(), vec![4, 0, 0, 4]);
    }

    #[test]
    fn spreading_errors_and_full_rank() {
        assert!(SpreadingMatrix::build(12, 4, 0).is_err());
        assert!(SpreadingMatrix::build(8, 9, 0).is_err());
        assert!(SpreadingMatrix::with_columns(8, &[1, 1]).is_err());
        let full = SpreadingMatrix::build(16, 16, 3).unwrap();
        assert!(full.is_orthogonal());
        let mut cols = full.columns().to_vec();
        cols.sort_unstable();
        assert_eq!(cols, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn transmit_boundaries() {
        let q = SpreadingMatrix::build(8, 2, 1).unwrap();
        let r = qpsk_modulate(&[0, 1, 1, 0]);
        let mut rng = rng::seeded(1);
        let (_, d) = random_qpsk(8, &mut rng);
        let e = 2.5;
        let s: Vec<Complex64> = q.spread(&r).iter().map(|x| x / 2f64.sqrt()).collect();

        let only_fb = TxConfig {
            rho: 1.0,
            energy: e,
            p_len: 8,
            mode: TxMode::Superimposed,
        };
        let x = transmit(&r, Some(&d), &q, &only_fb).unwrap();
        for (a, b) in x.iter().zip(&s) {
            assert!((a - b * e.sqrt()).norm() < 1e-12);
        }
        let only_data = TxConfig { rho: 0.0, ..only_fb };
        let x = transmit(&r, Some(&d), &q, &only_data).unwrap();
        for (a, b) in x.iter().zip(&d) {
            assert!((a - b * e.sqrt()).norm() < 1e-12);
        }
        let tdm = TxConfig {
            mode: TxMode::Tdm,
            rho: 0.3,
            ..only_fb
        };
        let x = transmit(&r, None, &q, &tdm).unwrap();
        for (a, b) in x.iter().zip(&s) {
            assert!((a - b * e.sqrt()).norm() < 1e-12);
        }
    }

    #[test]
    fn transmit_requires_p_greater_than_t() {
        let q = SpreadingMatrix::build(4, 4, 0).unwrap();
        let r = vec![c(1.0, 0.0); 4];
        let d = vec![c(1.0, 0.0); 4];
        let cfg = TxConfig {
            rho: 0.5,
            energy: 1.0,
            p_len: 4,
            mode: TxMode::Superimposed,
        };
        assert!(matches!(transmit(&r, Some(&d), &q, &cfg), Err(Error::InvalidConfig(_))));
        let tdm = TxConfig {
            mode: TxMode::Tdm,
            ..cfg
        };
        assert!(transmit(&r, None, &q, &tdm).is_ok());
    }

    #[test]
    fn noiseless_channel_on_first_antenna() {
        let tx = vec![c(1.0, 2.0), c(-0.5, 0.1), c(0.0, 3.0)];
        let g = vec![c(1.0, 0.0), c(0.0, 0.0)];
        let rx = channel_apply(&tx, &g, 0.0, &mut rng::seeded(0));
        assert_eq!(rx.row(0), &tx[..]);
        assert!(rx.row(1).iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn noiseless_round_trip_and_cancellation() {
        let (n, m) = (8usize, 16usize);
        let k = n + 2 * m;
        let t = k.div_ceil(2);
        let q = SpreadingMatrix::build(64, t, 7).unwrap();
        let mut rng = rng::seeded(21);
        let g: Vec<Complex64> = (0..4).map(|i| c(1.0 + i as f64, -0.5)).collect();
        let layout = FvLayout { support_len: n, m };
        for rho in [1.0, 0.2] {
            let cfg = TxConfig {
                rho,
                energy: 1.0,
                p_len: 64,
                mode: TxMode::Superimposed,
            };
            let bits: Vec<u8> = (0..k).map(|_| u8::from(rng.random::<bool>())).collect();
            let fv = FeedbackVector::from_bits(&bits, layout).unwrap();
            let (d_bits, d) = random_qpsk(64, &mut rng);
            let x = transmit(&qpsk_modulate(&bits), Some(&d), &q, &cfg).unwrap();
            let rx = channel_apply(&x, &g, 0.0, &mut rng);
            let det = receive(&rx, &g, &q, &cfg, layout).unwrap();
            if rho == 1.0 {
                assert_eq!(det.fv, fv);
                assert!(det.ulus_bits.is_none());
            } else if det.fv == fv {
                assert_eq!(det.ulus_bits.unwrap(), d_bits);
            }
        }
    }

    #[test]
    fn receive_rejects_zero_channel() {
        let q = SpreadingMatrix::build(8, 2, 0).unwrap();
        let cfg = TxConfig {
            rho: 0.5,
            energy: 1.0,
            p_len: 8,
            mode: TxMode::Superimposed,
        };
        let rx = RxBlock {
            n: 2,
            p: 8,
            data: vec![c(0.0, 0.0); 16],
        };
        let layout = FvLayout { support_len: 2, m: 1 };
        assert!(receive(&rx, &[c(0.0, 0.0); 2], &q, &cfg, layout).is_err());
    }

    #[test]
    fn snr_helper() {
        assert!((noise_variance(1.0, 10.0) - 0.1).abs() < 1e-15);
        assert!((noise_variance(2.0, 0.0) - 2.0).abs() < 1e-15);
    }
}
