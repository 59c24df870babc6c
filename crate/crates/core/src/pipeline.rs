//! End-to-end CSI recovery: reconstruction, amplitude learning, fusion.
//!
//! The base station runs a few support-aided BIHT iterations to get an
//! initial amplitude and an angle, predicts a second amplitude from the
//! uplink angular magnitudes, fuses both amplitudes with a second network
//! and recombines the result with the reconstructed angle.

pub mod corpus;
pub mod trial;

pub use corpus::{
    ampf_corpus, ampl_corpus, build_training_corpora, decode_corpus, encode_corpus, read_corpus, records_to_samples,
    split_indices, write_corpus, CorpusRecord, Split, SplitSamples,
};
pub use trial::{run_trial, Scheme, SystemSetup, TrialMetrics};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::nn::MlpModel;
use crate::onebit::{self, BihtOptions, FeedbackVector, MeasurementMatrix, ReconstructionResult};

fn expect_shape(model: &MlpModel, want: (usize, usize, usize), what: &'static str) -> Result<()> {
    let got = model.shape();
    if got != want {
        return Err(Error::InvalidArgument(format!(
            "{what} model has shape {got:?}, expected {want:?}"
        )));
    }
    Ok(())
}

/// Shape `(N, 2N, N)`.
pub fn ampl_shape(n: usize) -> (usize, usize, usize) {
    (n, 2 * n, n)
}

/// Shape `(2N, 2N, N)`.
pub fn ampf_shape(n: usize) -> (usize, usize, usize) {
    (2 * n, 2 * n, n)
}

fn clamp_nonnegative(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

pub fn uplink_magnitudes(uplink_angular: &[Complex64]) -> Vec<f64> {
    uplink_angular.iter().map(|c| c.norm()).collect()
}

/// Auxiliary downlink amplitude predicted from the uplink angular magnitudes.
pub fn ampl_infer(uplink_angular: &[Complex64], model: &MlpModel) -> Result<Vec<f64>> {
    expect_shape(model, ampl_shape(uplink_angular.len()), "amplitude-learning")?;
    Ok(clamp_nonnegative(model.forward(&uplink_magnitudes(uplink_angular))?))
}

/// `[initial | auxiliary]`.
pub fn fusion_input(initial: &[f64], auxiliary: &[f64]) -> Result<Vec<f64>> {
    if initial.len() != auxiliary.len() {
        return Err(Error::dim("auxiliary amplitude", initial.len(), auxiliary.len()));
    }
    let mut x = Vec::with_capacity(2 * initial.len());
    x.extend_from_slice(initial);
    x.extend_from_slice(auxiliary);
    Ok(x)
}

pub fn fuse_amplitudes(initial: &[f64], auxiliary: &[f64], model: &MlpModel) -> Result<Vec<f64>> {
    let x = fusion_input(initial, auxiliary)?;
    expect_shape(model, ampf_shape(initial.len()), "amplitude-fusion")?;
    Ok(clamp_nonnegative(model.forward(&x)?))
}

/// `amplitude ⊙ exp(j·angle)`.
pub fn recombine(amplitude: &[f64], angle: &[f64]) -> Vec<Complex64> {
    amplitude
        .iter()
        .zip(angle)
        .map(|(&a, &t)| Complex64::from_polar(a, t))
        .collect()
}

/// Which stages of the recovery chain run.
#[derive(Debug, Clone, Copy)]
pub enum Recovery<'a> {
    /// Reconstruction, amplitude learning and fusion.
    Fusion {
        iterations: usize,
        ampl: &'a MlpModel,
        ampf: &'a MlpModel,
    },
    /// Support-aided reconstruction alone.
    ReconOnly { iterations: usize },
    /// Top-S BIHT on sign bits only.
    TopS { iterations: usize, sparsity: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Reconstruction,
    AmplitudeLearning,
    AmplitudeFusion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredCsi {
    /// Final amplitude used in `full`.
    pub amplitude: Vec<f64>,
    pub angle: Vec<f64>,
    pub full: Vec<Complex64>,
    /// Amplitude straight out of the reconstruction.
    pub initial_amplitude: Vec<f64>,
    pub auxiliary_amplitude: Option<Vec<f64>>,
    pub fused_input: Option<Vec<f64>>,
    pub stages: Vec<Stage>,
    /// Nominal cost: reconstruction counter plus network weights and FLOPs.
    pub flops: u64,
}

/// Full recovery with both networks.
pub fn recover(
    fv: &FeedbackVector,
    uplink_angular: &[Complex64],
    phi: &MeasurementMatrix,
    iterations: usize,
    ampl: &MlpModel,
    ampf: &MlpModel,
) -> Result<RecoveredCsi> {
    recover_with(
        fv,
        uplink_angular,
        phi,
        Recovery::Fusion { iterations, ampl, ampf },
        1.0,
    )
}

pub fn recover_with(
    fv: &FeedbackVector,
    uplink_angular: &[Complex64],
    phi: &MeasurementMatrix,
    mode: Recovery<'_>,
    step: f64,
) -> Result<RecoveredCsi> {
    let opts = |iterations| BihtOptions {
        step,
        ..BihtOptions::new(iterations)
    };
    match mode {
        Recovery::ReconOnly { iterations } => {
            let rec = onebit::sca_biht_with(fv, phi, &opts(iterations))?;
            Ok(passthrough(rec))
        }
        Recovery::TopS { iterations, sparsity } => {
            let rec = onebit::biht_top_s(&fv.p_real, &fv.p_imag, phi, sparsity, &opts(iterations))?;
            Ok(passthrough(rec))
        }
        Recovery::Fusion { iterations, ampl, ampf } => {
            let n = phi.n();
            if uplink_angular.len() != n {
                return Err(Error::dim("uplink angular", n, uplink_angular.len()));
            }
            expect_shape(ampl, ampl_shape(n), "amplitude-learning")?;
            expect_shape(ampf, ampf_shape(n), "amplitude-fusion")?;
            let rec = onebit::sca_biht_with(fv, phi, &opts(iterations))?;
            let auxiliary = ampl_infer(uplink_angular, ampl)?;
            let fused_input = fusion_input(&rec.amplitude, &auxiliary)?;
            let amplitude = clamp_nonnegative(ampf.forward(&fused_input)?);
            let full = recombine(&amplitude, &rec.angle);
            let flops = rec.flops + network_cost(ampl) + network_cost(ampf);
            Ok(RecoveredCsi {
                amplitude,
                angle: rec.angle,
                full,
                initial_amplitude: rec.amplitude,
                auxiliary_amplitude: Some(auxiliary),
                fused_input: Some(fused_input),
                stages: vec![Stage::Reconstruction, Stage::AmplitudeLearning, Stage::AmplitudeFusion],
                flops,
            })
        }
    }
}

/// Weights plus FLOPs, the way the per-recovery totals add them up.
fn network_cost(model: &MlpModel) -> u64 {
    crate::nn::count_weights(model) + crate::nn::count_flops(model)
}

fn passthrough(rec: ReconstructionResult) -> RecoveredCsi {
    let full = recombine(&rec.amplitude, &rec.angle);
    RecoveredCsi {
        amplitude: rec.amplitude.clone(),
        angle: rec.angle,
        full,
        initial_amplitude: rec.amplitude,
        auxiliary_amplitude: None,
        fused_input: None,
        stages: vec![Stage::Reconstruction],
        flops: rec.flops,
    }
}

/// `‖truth − estimate‖² / ‖truth‖²`.
pub fn nmse(truth: &[Complex64], estimate: &[Complex64]) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::dim("estimate", truth.len(), estimate.len()));
    }
    let denom: f64 = truth.iter().map(|c| c.norm_sqr()).sum();
    if denom <= 0.0 {
        return Err(Error::InvalidArgument("truth has zero norm".into()));
    }
    let num: f64 = truth.iter().zip(estimate).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(num / denom)
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
