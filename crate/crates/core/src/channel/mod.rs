//! Reciprocal uplink/downlink channel pairs in the angular domain.
//!
//! A clustered multipath model stands in for full CDL profiles. Every path
//! has one angle of departure shared by both link directions and one mean
//! power; only the complex path gains differ between uplink and downlink.
//! The gain magnitudes of the two directions are drawn from a pair of
//! complex Gaussians with correlation `gain_correlation`, the phases are
//! independent. The uplink carrier offset is modelled by scaling the
//! steering phase with `ul_dl_frequency_ratio`.
//!
//! The array is a half-wavelength uniform linear array, so the steering
//! vector for angle `θ` is `a[n] = exp(jπ n sin θ)`, and the angular domain
//! is reached through the unitary DFT.

pub(crate) mod dataset;

pub use dataset::{decode_dataset, encode_dataset, read_dataset, read_dataset_with_n, write_dataset};

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

/// Stream tag for dataset generation.
const DATASET_STREAM: u64 = 0xC4A9;

/// Parameters of the clustered multipath generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelGenConfig {
    pub n_antennas: usize,
    pub sparsity: usize,
    pub n_paths: usize,
    /// Full width of the AoD cluster, radians.
    pub angle_spread: f64,
    /// Mean power drop between consecutive paths, dB.
    pub per_path_power_decay: f64,
    pub gain_correlation: f64,
    pub ul_dl_frequency_ratio: f64,
    pub seed: u64,
}

impl Default for ChannelGenConfig {
    fn default() -> Self {
        Self {
            n_antennas: 64,
            sparsity: 8,
            n_paths: 10,
            angle_spread: std::f64::consts::PI,
            per_path_power_decay: 4.0,
            gain_correlation: 0.9,
            ul_dl_frequency_ratio: 1.0,
            seed: 1,
        }
    }
}

impl ChannelGenConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_antennas;
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "n_antennas must be a power of two, got {n}"
            )));
        }
        if self.sparsity == 0 || self.sparsity > self.n_paths {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= sparsity <= n_paths, got sparsity {} with {} paths",
                self.sparsity, self.n_paths
            )));
        }
        if self.n_paths > n {
            return Err(Error::InvalidConfig(format!(
                "n_paths ({}) exceeds n_antennas ({n})",
                self.n_paths
            )));
        }
        if !(0.0..=1.0).contains(&self.gain_correlation) {
            return Err(Error::InvalidConfig(format!(
                "gain_correlation must lie in [0, 1], got {}",
                self.gain_correlation
            )));
        }
        if !(self.ul_dl_frequency_ratio > 0.0 && self.ul_dl_frequency_ratio.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "ul_dl_frequency_ratio must be positive, got {}",
                self.ul_dl_frequency_ratio
            )));
        }
        if !(self.angle_spread >= 0.0 && self.angle_spread.is_finite()) {
            return Err(Error::InvalidConfig("angle_spread must be finite and >= 0".into()));
        }
        if !self.per_path_power_decay.is_finite() {
            return Err(Error::InvalidConfig("per_path_power_decay must be finite".into()));
        }
        Ok(())
    }
}

/// One reciprocal channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPair {
    /// Sparse, unit-norm downlink CSI in the angular domain.
    pub downlink_angular: Vec<Complex64>,
    pub uplink_spatial: Vec<Complex64>,
    pub uplink_angular: Vec<Complex64>,
    /// 1 where `downlink_angular` is nonzero.
    pub support: Vec<u8>,
    pub sparsity: usize,
}

impl ChannelPair {
    /// Assembles a pair, deriving the uplink angular form.
    pub fn new(
        downlink_angular: Vec<Complex64>,
        uplink_spatial: Vec<Complex64>,
        support: Vec<u8>,
        sparsity: usize,
    ) -> Result<Self> {
        let n = downlink_angular.len();
        if uplink_spatial.len() != n {
            return Err(Error::dim("uplink_spatial", n, uplink_spatial.len()));
        }
        if support.len() != n {
            return Err(Error::dim("support", n, support.len()));
        }
        let uplink_angular = to_angular(&uplink_spatial);
        Ok(Self {
            downlink_angular,
            uplink_spatial,
            uplink_angular,
            support,
            sparsity,
        })
    }

    pub fn n(&self) -> usize {
        self.downlink_angular.len()
    }

    pub fn downlink_amplitude(&self) -> Vec<f64> {
        self.downlink_angular.iter().map(|c| c.norm()).collect()
    }

    pub fn uplink_amplitude(&self) -> Vec<f64> {
        self.uplink_angular.iter().map(|c| c.norm()).collect()
    }

    /// Rounds the stored fields to `f32`, the precision of the dataset file,
    /// and recomputes the uplink angular form from the rounded samples.
    pub fn to_storage_precision(&self) -> Self {
        let round = |v: &[Complex64]| -> Vec<Complex64> {
            v.iter()
                .map(|c| Complex64::new(c.re as f32 as f64, c.im as f32 as f64))
                .collect()
        };
        let uplink_spatial = round(&self.uplink_spatial);
        Self {
            downlink_angular: round(&self.downlink_angular),
            uplink_angular: to_angular(&uplink_spatial),
            uplink_spatial,
            support: self.support.clone(),
            sparsity: self.sparsity,
        }
    }
}

/// One propagation path shared by both link directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub aod: f64,
    pub downlink_gain: Complex64,
    pub uplink_gain: Complex64,
}

/// A generated pair plus the downlink angular vector before truncation.
#[derive(Debug, Clone)]
pub struct ChannelDraw {
    pub pair: ChannelPair,
    pub downlink_dense: Vec<Complex64>,
}

fn circular_gaussian(rng: &mut SimRng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Draws the path geometry and the correlated per-direction gains.
pub fn draw_paths(cfg: &ChannelGenConfig, rng: &mut SimRng) -> Vec<Path> {
    let center = rng.random_range(-PI / 2.0..PI / 2.0);
    let powers: Vec<f64> = (0..cfg.n_paths)
        .map(|p| 10f64.powf(-cfg.per_path_power_decay * p as f64 / 10.0))
        .collect();
    let total: f64 = powers.iter().sum();
    let rho = cfg.gain_correlation;
    let innov = (1.0 - rho * rho).max(0.0).sqrt();

    powers
        .iter()
        .map(|&power| {
            let aod = center + cfg.angle_spread * (rng.random::<f64>() - 0.5);
            let z_dl = circular_gaussian(rng);
            let z_new = circular_gaussian(rng);
            let z_ul = z_dl * rho + z_new * innov;
            let phase_dl = rng.random_range(0.0..2.0 * PI);
            let phase_ul = rng.random_range(0.0..2.0 * PI);
            let amp = (power / total).sqrt();
            Path {
                aod,
                downlink_gain: Complex64::from_polar(amp * z_dl.norm(), phase_dl),
                uplink_gain: Complex64::from_polar(amp * z_ul.norm(), phase_ul),
            }
        })
        .collect()
}

fn steered_sum(n: usize, paths: &[Path], ratio: f64, gain: impl Fn(&Path) -> Complex64) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for path in paths {
        let g = gain(path);
        let step = PI * ratio * path.aod.sin();
        for (i, o) in out.iter_mut().enumerate() {
            *o += g * Complex64::from_polar(1.0, step * i as f64);
        }
    }
    out
}

/// Builds a channel pair from explicit paths.
pub fn pair_from_paths(cfg: &ChannelGenConfig, paths: &[Path]) -> Result<ChannelDraw> {
    cfg.validate()?;
    let n = cfg.n_antennas;
    let dl_spatial = steered_sum(n, paths, 1.0, |p| p.downlink_gain);
    let ul_spatial = steered_sum(n, paths, cfg.ul_dl_frequency_ratio, |p| p.uplink_gain);
    let downlink_dense = to_angular(&dl_spatial);
    let (downlink_angular, support) = sparsify(&downlink_dense, cfg.sparsity)?;
    let pair = ChannelPair::new(downlink_angular, ul_spatial, support, cfg.sparsity)?;
    Ok(ChannelDraw { pair, downlink_dense })
}

pub fn generate_pair_detailed(cfg: &ChannelGenConfig, rng: &mut SimRng) -> Result<ChannelDraw> {
    cfg.validate()?;
    let paths = draw_paths(cfg, rng);
    pair_from_paths(cfg, &paths)
}

pub fn generate_pair(cfg: &ChannelGenConfig, rng: &mut SimRng) -> Result<ChannelPair> {
    generate_pair_detailed(cfg, rng).map(|d| d.pair)
}

/// Generates `count` pairs, pair `i` from its own stream under `cfg.seed`.
pub fn generate_dataset(cfg: &ChannelGenConfig, count: usize) -> Result<Vec<ChannelPair>> {
    cfg.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| generate_pair(cfg, &mut rng::stream(cfg.seed, DATASET_STREAM, i as u64)))
        .collect()
}

/// Unitary DFT of length `n`.
#[derive(Clone)]
pub struct AngularTransform {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for AngularTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AngularTransform").field("n", &self.n).finish()
    }
}

impl AngularTransform {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn to_angular(&self, spatial: &[Complex64]) -> Result<Vec<Complex64>> {
        self.run(&self.forward, spatial)
    }

    pub fn to_spatial(&self, angular: &[Complex64]) -> Result<Vec<Complex64>> {
        self.run(&self.inverse, angular)
    }

    fn run(&self, fft: &Arc<dyn Fft<f64>>, input: &[Complex64]) -> Result<Vec<Complex64>> {
        if input.len() != self.n {
            return Err(Error::dim("angular transform input", self.n, input.len()));
        }
        let mut buf = input.to_vec();
        fft.process(&mut buf);
        let scale = 1.0 / (self.n as f64).sqrt();
        buf.iter_mut().for_each(|c| *c *= scale);
        Ok(buf)
    }
}

thread_local! {
    static PLANNER: std::cell::RefCell<FftPlanner<f64>> = std::cell::RefCell::new(FftPlanner::new());
}

/// Unitary DFT sized to the input.
pub fn to_angular(spatial: &[Complex64]) -> Vec<Complex64> {
    let n = spatial.len();
    if n == 0 {
        return Vec::new();
    }
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n));
    let mut buf = spatial.to_vec();
    fft.process(&mut buf);
    let scale = 1.0 / (n as f64).sqrt();
    buf.iter_mut().for_each(|c| *c *= scale);
    buf
}

/// Keeps the `s` largest-magnitude entries (ties go to the lower index),
/// rescales them to unit norm and reports the kept positions.
pub fn sparsify(v: &[Complex64], s: usize) -> Result<(Vec<Complex64>, Vec<u8>)> {
    let n = v.len();
    if s == 0 || s > n {
        return Err(Error::InvalidArgument(format!("sparsity {s} out of range 1..={n}")));
    }
    if v.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::InvalidArgument("non-finite entry".into()));
    }
    let nonzero = v.iter().filter(|c| c.norm_sqr() > 0.0).count();
    if nonzero == 0 {
        return Err(Error::InvalidArgument("all-zero input".into()));
    }
    if nonzero < s {
        return Err(Error::InvalidArgument(format!(
            "only {nonzero} nonzero entries, cannot keep {s}"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal magnitudes keep ascending index order
    order.sort_by(|&a, &b| v[b].norm_sqr().total_cmp(&v[a].norm_sqr()));

    let mut support = vec![0u8; n];
    for &i in &order[..s] {
        support[i] = 1;
    }
    let norm = order[..s].iter().map(|&i| v[i].norm_sqr()).sum::<f64>().sqrt();
    let sparse = v
        .iter()
        .zip(&support)
        .map(|(c, &keep)| if keep == 1 { c / norm } else { Complex64::new(0.0, 0.0) })
        .collect();
    Ok((sparse, support))
}
