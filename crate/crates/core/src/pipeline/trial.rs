//! One Monte-Carlo frame through the whole feedback chain.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::{generate_pair, ChannelGenConfig, ChannelPair};
use crate::error::{Error, Result};
use crate::link::{self, Detection, SpreadingMatrix, TxConfig, TxMode};
use crate::nn::MlpModel;
use crate::onebit::{self, FvLayout, MeasurementMatrix};
use crate::rng;

use super::{nmse, recover_with, Recovery};

const CHANNEL_STREAM: u64 = 0xE7A1;
const DATA_STREAM: u64 = 0xDA7A;
const NOISE_STREAM: u64 = 0x0153;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Superimposed feedback, few iterations, amplitude fusion.
    Proposed,
    /// Superimposed feedback, support-aided BIHT only.
    RefY1,
    /// Dedicated (TDM) sign-only feedback with top-S BIHT. Approximate.
    RefR1Tdm,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::RefY1 => "ref_y1",
            Scheme::RefR1Tdm => "ref_r1_tdm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Scheme::Proposed),
            "ref_y1" => Ok(Scheme::RefY1),
            "ref_r1_tdm" => Ok(Scheme::RefR1Tdm),
            other => Err(Error::InvalidConfig(format!("unknown scheme {other:?}"))),
        }
    }
}

/// Fixed system matrices shared by every frame at one compression rate.
#[derive(Debug, Clone)]
pub struct SystemSetup {
    pub channel: ChannelGenConfig,
    pub phi: MeasurementMatrix,
    /// `P × ⌈(N+2M)/2⌉`, superimposed schemes.
    pub spreading: SpreadingMatrix,
    /// `P × M`, sign-only TDM feedback.
    pub spreading_tdm: SpreadingMatrix,
    pub energy: f64,
    pub step: f64,
    /// Detection passes in the receiver, see [`link::receive_sic`].
    pub sic_passes: usize,
}

impl SystemSetup {
    pub fn new(
        channel: ChannelGenConfig,
        m: usize,
        p_len: usize,
        phi_seed: u64,
        spreading_seed: u64,
        energy: f64,
        step: f64,
    ) -> Result<Self> {
        channel.validate()?;
        let n = channel.n_antennas;
        let t = (n + 2 * m).div_ceil(2);
        if t >= p_len {
            return Err(Error::InvalidConfig(format!(
                "T = {t} feedback symbols need P > T, got P = {p_len}"
            )));
        }
        Ok(Self {
            phi: MeasurementMatrix::gaussian(n, m, phi_seed),
            spreading: SpreadingMatrix::build(p_len, t, spreading_seed)?,
            spreading_tdm: SpreadingMatrix::build(p_len, m, spreading_seed)?,
            channel,
            energy,
            step,
            sic_passes: 1,
        })
    }

    pub fn n(&self) -> usize {
        self.channel.n_antennas
    }

    pub fn m(&self) -> usize {
        self.phi.m()
    }

    pub fn p_len(&self) -> usize {
        self.spreading.p_len()
    }
}

/// What crossed the link in one frame.
#[derive(Debug, Clone)]
pub struct LinkOutcome {
    pub pair: ChannelPair,
    pub sent_bits: Vec<u8>,
    pub ulus_bits: Option<Vec<u8>>,
    pub detection: Detection,
}

/// Draws a channel, encodes, transmits and detects frame `trial`.
///
/// Channel, user data and noise come from separate streams keyed by the
/// trial index only, so every scheme and grid point sees the same draws.
pub fn simulate_link(
    setup: &SystemSetup,
    scheme: Scheme,
    snr_db: f64,
    rho: f64,
    seed: u64,
    trial: u64,
) -> Result<LinkOutcome> {
    let pair = generate_pair(&setup.channel, &mut rng::stream(seed, CHANNEL_STREAM, trial))?;
    let fv = onebit::quantize(&pair.downlink_angular, &setup.phi, &pair.support)?;
    let p = setup.p_len();

    let (bits, layout, q, mode) = match scheme {
        Scheme::Proposed | Scheme::RefY1 => (fv.to_bits(), fv.layout(), &setup.spreading, TxMode::Superimposed),
        Scheme::RefR1Tdm => {
            let mut w = fv.p_real.clone();
            w.extend_from_slice(&fv.p_imag);
            let layout = FvLayout {
                support_len: 0,
                m: setup.m(),
            };
            (w, layout, &setup.spreading_tdm, TxMode::Tdm)
        }
    };
    let cfg = TxConfig {
        rho,
        energy: setup.energy,
        p_len: p,
        mode,
    };
    let (ulus_bits, ulus) = match mode {
        TxMode::Superimposed => {
            let (b, d) = link::random_qpsk(p, &mut rng::stream(seed, DATA_STREAM, trial));
            (Some(b), Some(d))
        }
        TxMode::Tdm => (None, None),
    };
    let tx = link::transmit(&link::qpsk_modulate(&bits), ulus.as_deref(), q, &cfg)?;
    let sigma2 = link::noise_variance(setup.energy, snr_db);
    let rx = link::channel_apply(
        &tx,
        &pair.uplink_spatial,
        sigma2,
        &mut rng::stream(seed, NOISE_STREAM, trial),
    );
    let detection = link::receive_sic(&rx, &pair.uplink_spatial, q, &cfg, layout, setup.sic_passes)?;
    Ok(LinkOutcome {
        pair,
        sent_bits: bits,
        ulus_bits,
        detection,
    })
}

pub fn recovery_mode<'a>(
    setup: &SystemSetup,
    scheme: Scheme,
    iterations: usize,
    models: Option<(&'a MlpModel, &'a MlpModel)>,
) -> Result<Recovery<'a>> {
    Ok(match scheme {
        Scheme::Proposed => {
            let (ampl, ampf) =
                models.ok_or_else(|| Error::Dependency("the proposed scheme needs both amplitude models".into()))?;
            Recovery::Fusion { iterations, ampl, ampf }
        }
        Scheme::RefY1 => Recovery::ReconOnly { iterations },
        Scheme::RefR1Tdm => Recovery::TopS {
            iterations,
            sparsity: setup.channel.sparsity,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub nmse_csi: f64,
    pub ber_fv: f64,
    pub ber_ulus: Option<f64>,
    pub recon_flops: u64,
    pub wallclock_ns: Option<u64>,
    /// Detected support was empty or the iterate collapsed; the estimate is zero.
    pub failed: bool,
}

/// Recovers the CSI from a simulated frame and scores it.
pub fn score(setup: &SystemSetup, outcome: &LinkOutcome, mode: Recovery<'_>, timing: bool) -> Result<TrialMetrics> {
    let det = &outcome.detection;
    let started = timing.then(Instant::now);
    let recovered = recover_with(&det.fv, &outcome.pair.uplink_angular, &setup.phi, mode, setup.step);
    let wallclock_ns = started.map(|t| t.elapsed().as_nanos() as u64);

    let truth = &outcome.pair.downlink_angular;
    let (nmse_csi, recon_flops, failed) = match recovered {
        Ok(r) => (nmse(truth, &r.full)?, r.flops, false),
        Err(Error::EmptySupport | Error::DegenerateReconstruction) => (1.0, 0, true),
        Err(e) => return Err(e),
    };
    let sent = det.fv.to_bits();
    let ber_fv = link::bit_errors(&sent, &outcome.sent_bits) as f64 / outcome.sent_bits.len() as f64;
    let ber_ulus = match (&det.ulus_bits, &outcome.ulus_bits) {
        (Some(got), Some(want)) => Some(link::bit_errors(got, want) as f64 / want.len() as f64),
        _ => None,
    };
    Ok(TrialMetrics {
        nmse_csi,
        ber_fv,
        ber_ulus,
        recon_flops,
        wallclock_ns,
        failed,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn run_trial(
    setup: &SystemSetup,
    scheme: Scheme,
    iterations: usize,
    models: Option<(&MlpModel, &MlpModel)>,
    snr_db: f64,
    rho: f64,
    seed: u64,
    trial: u64,
) -> Result<TrialMetrics> {
    let mode = recovery_mode(setup, scheme, iterations, models)?;
    let outcome = simulate_link(setup, scheme, snr_db, rho, seed, trial)?;
    score(setup, &outcome, mode, false)
}
