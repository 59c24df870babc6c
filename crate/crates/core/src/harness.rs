//! Experiment configuration, parameter sweeps, training drivers and timing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{self, ChannelGenConfig};
use crate::error::{Error, Result};
use crate::link::SNR_DEFINITION;
use crate::nn::{self, MlpModel, TrainConfig, TrainReport};
use crate::pipeline::{
    self, ampf_shape, ampl_shape, mean_and_stderr, split_indices, Scheme, SplitSamples, SystemSetup, TrialMetrics,
};

pub const CSV_HEADER: &str =
    "scheme,snr_db,rho,c,alpha_or_beta,mean_nmse,std_err,ber_fv,ber_ulus,mean_recon_ns,flops,config_hash";
pub const BENCH_HEADER: &str =
    "scheme,c,alpha_or_beta,trials,total_ns,mean_recon_ns,flops_per_recovery,total_flops,config_hash";
pub const NMSE_DEFINITION: &str = "mean(|h - h_est|^2 / |h|^2), unit-norm downlink";

/// A scalar or a list in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Channel-generator knobs; `N` and `S` live at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub n_paths: usize,
    pub angle_spread: f64,
    pub per_path_power_decay: f64,
    pub gain_correlation: f64,
    pub ul_dl_frequency_ratio: f64,
    pub seed: u64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        let d = ChannelGenConfig::default();
        Self {
            n_paths: d.n_paths,
            angle_spread: d.angle_spread,
            per_path_power_decay: d.per_path_power_decay,
            gain_correlation: d.gain_correlation,
            ul_dl_frequency_ratio: d.ul_dl_frequency_ratio,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Base-station antennas `N`.
    pub n: usize,
    /// Downlink sparsity `S`.
    pub s: usize,
    /// Spreading length `P`.
    pub p: usize,
    /// Compression rate `M/N`.
    pub c: OneOrMany<f64>,
    pub rho: OneOrMany<f64>,
    pub snr_db: Vec<f64>,
    /// Iterations of the proposed scheme.
    pub alpha: usize,
    /// Iterations of the reference schemes.
    pub beta: usize,
    pub scheme: OneOrMany<Scheme>,
    pub n_trials: usize,
    pub seed: u64,
    pub energy: f64,
    pub step: f64,
    /// Receiver detection passes; 1 is plain feedback-first cancellation.
    pub sic_passes: usize,
    pub phi_seed: u64,
    pub spreading_seed: u64,
    pub dataset_size: usize,
    pub dataset: PathBuf,
    pub ampl_model: PathBuf,
    pub ampf_model: PathBuf,
    pub channel: ChannelParams,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 64,
            s: 8,
            p: 512,
            c: OneOrMany::One(2.0),
            rho: OneOrMany::One(0.10),
            snr_db: vec![10.0],
            alpha: 5,
            beta: 100,
            scheme: OneOrMany::One(Scheme::Proposed),
            n_trials: 2000,
            seed: 1,
            energy: 1.0,
            step: 1.0,
            sic_passes: 1,
            phi_seed: 2024,
            spreading_seed: 512,
            dataset_size: 10_000,
            dataset: PathBuf::from("data/channels.cpd"),
            ampl_model: PathBuf::from("models/ampl.json"),
            ampf_model: PathBuf::from("models/ampf.json"),
            channel: ChannelParams::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn channel_config(&self) -> ChannelGenConfig {
        ChannelGenConfig {
            n_antennas: self.n,
            sparsity: self.s,
            n_paths: self.channel.n_paths,
            angle_spread: self.channel.angle_spread,
            per_path_power_decay: self.channel.per_path_power_decay,
            gain_correlation: self.channel.gain_correlation,
            ul_dl_frequency_ratio: self.channel.ul_dl_frequency_ratio,
            seed: self.channel.seed,
        }
    }

    /// `M = round(c·N)`.
    pub fn measurements(&self, c: f64) -> usize {
        (c * self.n as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.channel_config().validate()?;
        if self.s > self.n {
            return Err(Error::InvalidConfig(format!("S = {} exceeds N = {}", self.s, self.n)));
        }
        for c in self.c.values() {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "compression rate must be positive, got {c}"
                )));
            }
            let m = self.measurements(c);
            let t = (self.n + 2 * m).div_ceil(2);
            if m == 0 || t >= self.p {
                return Err(Error::InvalidConfig(format!(
                    "c = {c}: M = {m}, T = {t} needs 0 < M and T < P = {}",
                    self.p
                )));
            }
        }
        if !self.p.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "P must be a power of two, got {}",
                self.p
            )));
        }
        for r in self.rho.values() {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::InvalidConfig(format!("rho must lie in (0, 1], got {r}")));
            }
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("snr_db values must be finite".into()));
        }
        let schemes = self.scheme.values();
        let has_proposed = schemes.contains(&Scheme::Proposed);
        let has_ref = schemes.iter().any(|s| *s != Scheme::Proposed);
        if has_proposed && has_ref && self.alpha > self.beta {
            return Err(Error::InvalidConfig(format!(
                "alpha ({}) must not exceed beta ({})",
                self.alpha, self.beta
            )));
        }
        if self.sic_passes == 0 {
            return Err(Error::InvalidConfig("sic_passes must be at least 1".into()));
        }
        if self.energy.is_nan() || self.energy <= 0.0 || self.step.is_nan() || self.step <= 0.0 {
            return Err(Error::InvalidConfig("energy and step must be positive".into()));
        }
        self.train.validate()
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn setup(&self, c: f64) -> Result<SystemSetup> {
        let mut setup = SystemSetup::new(
            self.channel_config(),
            self.measurements(c),
            self.p,
            self.phi_seed,
            self.spreading_seed,
            self.energy,
            self.step,
        )?;
        setup.sic_passes = self.sic_passes;
        Ok(setup)
    }

    fn iterations(&self, scheme: Scheme) -> usize {
        match scheme {
            Scheme::Proposed => self.alpha,
            Scheme::RefY1 | Scheme::RefR1Tdm => self.beta,
        }
    }
}

/// The two trained amplitude networks.
#[derive(Debug, Clone)]
pub struct Models {
    pub ampl: MlpModel,
    pub ampf: MlpModel,
}

impl Models {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let need = |p: &Path, what: &str| -> Result<MlpModel> {
            if !p.exists() {
                return Err(Error::Dependency(format!(
                    "{what} model {} not found; run `superfeed train` first",
                    p.display()
                )));
            }
            MlpModel::load(p)
        };
        let models = Self {
            ampl: need(&cfg.ampl_model, "amplitude-learning")?,
            ampf: need(&cfg.ampf_model, "amplitude-fusion")?,
        };
        models.check(cfg.n)?;
        Ok(models)
    }

    pub fn check(&self, n: usize) -> Result<()> {
        if self.ampl.shape() != ampl_shape(n) || self.ampf.shape() != ampf_shape(n) {
            return Err(Error::InvalidConfig(format!(
                "model shapes {:?}/{:?} do not match N = {n}",
                self.ampl.shape(),
                self.ampf.shape()
            )));
        }
        Ok(())
    }

    fn pair(&self) -> (&MlpModel, &MlpModel) {
        (&self.ampl, &self.ampf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub scheme: Scheme,
    pub snr_db: f64,
    pub rho: f64,
    pub c: f64,
    pub alpha_or_beta: usize,
    pub mean_nmse: f64,
    pub std_err: f64,
    pub ber_fv: f64,
    pub ber_ulus: Option<f64>,
    pub mean_recon_ns: Option<f64>,
    pub flops: u64,
    pub config_hash: String,
    pub failed_trials: usize,
}

impl SweepRecord {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.scheme.name(),
            self.snr_db,
            self.rho,
            self.c,
            self.alpha_or_beta,
            self.mean_nmse,
            self.std_err,
            self.ber_fv,
            opt(self.ber_ulus),
            opt(self.mean_recon_ns),
            self.flops,
            self.config_hash
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn find(&self, scheme: Scheme, snr_db: f64, rho: f64, c: f64) -> Option<&SweepRecord> {
        self.records
            .iter()
            .find(|r| r.scheme == scheme && r.snr_db == snr_db && r.rho == rho && r.c == c)
    }
}

/// Aggregates per-trial metrics in trial order.
pub fn aggregate(metrics: &[TrialMetrics]) -> (f64, f64, f64, Option<f64>, Option<f64>, usize) {
    let nmse: Vec<f64> = metrics.iter().map(|m| m.nmse_csi).collect();
    let (mean, se) = mean_and_stderr(&nmse);
    let count = metrics.len().max(1) as f64;
    let ber_fv = metrics.iter().map(|m| m.ber_fv).sum::<f64>() / count;
    let ulus: Vec<f64> = metrics.iter().filter_map(|m| m.ber_ulus).collect();
    let ber_ulus = (!ulus.is_empty()).then(|| ulus.iter().sum::<f64>() / ulus.len() as f64);
    let times: Vec<u64> = metrics.iter().filter_map(|m| m.wallclock_ns).collect();
    let mean_ns = (!times.is_empty()).then(|| times.iter().sum::<u64>() as f64 / times.len() as f64);
    let failed = metrics.iter().filter(|m| m.failed).count();
    (mean, se, ber_fv, ber_ulus, mean_ns, failed)
}

/// Nominal per-recovery cost of a scheme.
pub fn scheme_flops(scheme: Scheme, m: usize, n: usize, iterations: usize) -> u64 {
    match scheme {
        Scheme::Proposed => {
            let (ai, ah, ao) = ampl_shape(n);
            let (fi, fh, fo) = ampf_shape(n);
            crate::onebit::sca_biht_flops(m, n, iterations)
                + nn::shape_weights(ai, ah, ao)
                + nn::shape_flops(ai, ah, ao)
                + nn::shape_weights(fi, fh, fo)
                + nn::shape_flops(fi, fh, fo)
        }
        Scheme::RefY1 => crate::onebit::sca_biht_flops(m, n, iterations),
        Scheme::RefR1Tdm => crate::onebit::biht_top_s_flops(m, n, iterations),
    }
}

/// Runs every grid point; trials fan out over the current rayon pool.
///
/// Trial `t` of every point draws channel, data and noise from streams
/// keyed by `(seed, t)`, and aggregation runs in trial order, so the result
/// does not depend on the number of worker threads. Wall-clock time is not
/// measured here (see [`run_bench`]); the `mean_recon_ns` column stays empty.
pub fn run_sweep(cfg: &ExperimentConfig, models: Option<&Models>) -> Result<SweepResult> {
    cfg.validate()?;
    let schemes = cfg.scheme.values();
    let (cs, rhos) = (cfg.c.values(), cfg.rho.values());
    if schemes.is_empty() || cs.is_empty() || rhos.is_empty() || cfg.snr_db.is_empty() || cfg.n_trials == 0 {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    if let Some(m) = models {
        m.check(cfg.n)?;
    }
    let hash = cfg.hash();
    let mut records = Vec::new();
    for &c in &cs {
        let setup = cfg.setup(c)?;
        for &scheme in &schemes {
            let iterations = cfg.iterations(scheme);
            let pair = match scheme {
                Scheme::Proposed => Some(
                    models
                        .ok_or_else(|| Error::Dependency("proposed scheme needs trained models".into()))?
                        .pair(),
                ),
                _ => None,
            };
            for &rho in &rhos {
                for &snr_db in &cfg.snr_db {
                    let metrics = (0..cfg.n_trials as u64)
                        .into_par_iter()
                        .map(|t| pipeline::run_trial(&setup, scheme, iterations, pair, snr_db, rho, cfg.seed, t))
                        .collect::<Result<Vec<_>>>()?;
                    let (mean, se, ber_fv, ber_ulus, _, failed) = aggregate(&metrics);
                    records.push(SweepRecord {
                        scheme,
                        snr_db,
                        rho,
                        c,
                        alpha_or_beta: iterations,
                        mean_nmse: mean,
                        std_err: se,
                        ber_fv,
                        ber_ulus,
                        mean_recon_ns: None,
                        flops: scheme_flops(scheme, setup.m(), setup.n(), iterations),
                        config_hash: hash.clone(),
                        failed_trials: failed,
                    });
                }
            }
        }
    }
    Ok(SweepResult { records })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub scheme: Scheme,
    pub c: f64,
    pub alpha_or_beta: usize,
    pub trials: usize,
    pub total_ns: u64,
    pub mean_recon_ns: f64,
    pub flops_per_recovery: u64,
    pub total_flops: u64,
    pub config_hash: String,
}

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.scheme.name(),
            self.c,
            self.alpha_or_beta,
            self.trials,
            self.total_ns,
            self.mean_recon_ns,
            self.flops_per_recovery,
            self.total_flops,
            self.config_hash
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(BENCH_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn find(&self, scheme: Scheme, c: f64) -> Option<&BenchRecord> {
        self.records.iter().find(|r| r.scheme == scheme && r.c == c)
    }
}

const BENCH_BLOCK: usize = 100;

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

/// Times `n_trials` recoveries per scheme and compression rate on the
/// calling thread. Frames are simulated first (at the first SNR and
/// `rho` of the config) and only the recovery is timed, in blocks of
/// 100 visited round-robin across rows so that every row sees the same
/// machine load. `mean_recon_ns` is the median over blocks of the
/// per-recovery time, `total_ns` the sum over all blocks.
pub fn run_bench(cfg: &ExperimentConfig, models: Option<&Models>) -> Result<BenchReport> {
    struct Row<'a> {
        c: f64,
        scheme: Scheme,
        iterations: usize,
        setup: SystemSetup,
        mode: pipeline::Recovery<'a>,
        frames: Vec<pipeline::trial::LinkOutcome>,
        total_ns: u64,
        total_flops: u64,
        per_recon: Vec<f64>,
    }

    cfg.validate()?;
    let snr_db = *cfg
        .snr_db
        .first()
        .ok_or_else(|| Error::InvalidConfig("snr_db is empty".into()))?;
    let rho = cfg.rho.values()[0];
    let hash = cfg.hash();
    let mut rows = Vec::new();
    for c in cfg.c.values() {
        for scheme in cfg.scheme.values() {
            let setup = cfg.setup(c)?;
            let iterations = cfg.iterations(scheme);
            let pair = match scheme {
                Scheme::Proposed => Some(
                    models
                        .ok_or_else(|| Error::Dependency("proposed scheme needs trained models".into()))?
                        .pair(),
                ),
                _ => None,
            };
            let mode = pipeline::trial::recovery_mode(&setup, scheme, iterations, pair)?;
            let frames = (0..cfg.n_trials as u64)
                .map(|t| pipeline::trial::simulate_link(&setup, scheme, snr_db, rho, cfg.seed, t))
                .collect::<Result<Vec<_>>>()?;
            rows.push(Row {
                c,
                scheme,
                iterations,
                setup,
                mode,
                frames,
                total_ns: 0,
                total_flops: 0,
                per_recon: Vec::new(),
            });
        }
    }

    for b in (0..cfg.n_trials).step_by(BENCH_BLOCK) {
        for row in &mut rows {
            let block = &row.frames[b..(b + BENCH_BLOCK).min(row.frames.len())];
            let started = Instant::now();
            for f in block {
                match pipeline::recover_with(
                    &f.detection.fv,
                    &f.pair.uplink_angular,
                    &row.setup.phi,
                    row.mode,
                    row.setup.step,
                ) {
                    Ok(r) => row.total_flops += std::hint::black_box(r).flops,
                    Err(Error::EmptySupport | Error::DegenerateReconstruction) => {}
                    Err(e) => return Err(e),
                }
            }
            let ns = started.elapsed().as_nanos() as u64;
            row.total_ns += ns;
            row.per_recon.push(ns as f64 / block.len() as f64);
        }
    }

    let records = rows
        .into_iter()
        .map(|mut row| BenchRecord {
            scheme: row.scheme,
            c: row.c,
            alpha_or_beta: row.iterations,
            trials: row.frames.len(),
            total_ns: row.total_ns,
            mean_recon_ns: median(&mut row.per_recon),
            flops_per_recovery: scheme_flops(row.scheme, row.setup.m(), row.setup.n(), row.iterations),
            total_flops: row.total_flops,
            config_hash: hash.clone(),
        })
        .collect();
    Ok(BenchReport { records })
}

/// Provenance document written next to every result file.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config_hash: String,
    pub snr_definition: &'static str,
    pub nmse_definition: &'static str,
    pub approximations: Vec<&'static str>,
    pub config: &'a ExperimentConfig,
}

impl<'a> Metadata<'a> {
    pub fn new(command: &'a str, config: &'a ExperimentConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_hash: config.hash(),
            snr_definition: SNR_DEFINITION,
            nmse_definition: NMSE_DEFINITION,
            approximations: vec![
                "ref_r1_tdm: approx (top-S BIHT on sign bits, TDM transmission)",
                "channel: clustered multipath with shared AoDs, not 3GPP CDL",
            ],
            config,
        }
    }
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_metadata(out: &Path, command: &str, cfg: &ExperimentConfig) -> Result<()> {
    let meta = serde_json::to_string_pretty(&Metadata::new(command, cfg)).expect("metadata serializes");
    write_text(&sidecar_path(out), &meta)
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSummary {
    pub count: usize,
    pub seed: u64,
    pub digest: String,
}

/// Generates the channel dataset and writes it to `out`.
pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<GenSummary> {
    cfg.validate()?;
    let chan = cfg.channel_config();
    let pairs = channel::generate_dataset(&chan, cfg.dataset_size)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let count = channel::write_dataset(&pairs, out)?;
    Ok(GenSummary {
        count,
        seed: chan.seed,
        digest: file_digest(out)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Ampl,
    Ampf,
}

/// Trains the amplitude-learning network on the dataset's training split.
pub fn train_ampl(cfg: &ExperimentConfig, pairs: &[channel::ChannelPair]) -> Result<(MlpModel, TrainReport)> {
    let split = split_indices(pairs.len(), cfg.seed)?;
    let all = pipeline::ampl_corpus(pairs)?;
    train_on_split(cfg, &all, &split, ampl_shape(cfg.n))
}

/// Trains the fusion network; needs the trained amplitude-learning model.
pub fn train_ampf(
    cfg: &ExperimentConfig,
    pairs: &[channel::ChannelPair],
    ampl: &MlpModel,
) -> Result<(MlpModel, TrainReport, Vec<pipeline::CorpusRecord>)> {
    if ampl.shape() != ampl_shape(cfg.n) {
        return Err(Error::InvalidConfig(format!(
            "amplitude-learning model has shape {:?}, expected {:?}",
            ampl.shape(),
            ampl_shape(cfg.n)
        )));
    }
    let split = split_indices(pairs.len(), cfg.seed)?;
    let c = cfg.c.values()[0];
    let setup = cfg.setup(c)?;
    let records = pipeline::corpus::corpus_records(pairs, &setup.phi, cfg.alpha, cfg.step, ampl)?;
    let all = pipeline::records_to_samples(&records, cfg.n);
    let (model, report) = train_on_split(cfg, &all, &split, ampf_shape(cfg.n))?;
    Ok((model, report, records))
}

fn train_on_split(
    cfg: &ExperimentConfig,
    all: &nn::Samples,
    split: &pipeline::Split,
    shape: (usize, usize, usize),
) -> Result<(MlpModel, TrainReport)> {
    let sets = SplitSamples::from_split(all, split);
    let (i, h, o) = shape;
    let mut model = MlpModel::init(i, h, o, cfg.train.seed);
    model.fit_standardization(sets.train.inputs.view())?;
    nn::train(&model, &sets.train, Some(&sets.val), &cfg.train)
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Vec<channel::ChannelPair>> {
    if !cfg.dataset.exists() {
        return Err(Error::Dependency(format!(
            "dataset {} not found; run `superfeed gen` first",
            cfg.dataset.display()
        )));
    }
    channel::read_dataset_with_n(&cfg.dataset, cfg.n)
}

/// Trains one network, writes the model to `out` and the loss history to
/// `<out>.loss.json`. The fusion network also leaves its corpus at
/// `<out>.corpus.cpf`.
pub fn cmd_train(cfg: &ExperimentConfig, which: Which, out: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    if which == Which::Ampf && !cfg.ampl_model.exists() {
        return Err(Error::Dependency(format!(
            "amplitude-fusion training needs the amplitude-learning model at {}; train ampl first",
            cfg.ampl_model.display()
        )));
    }
    let pairs = load_dataset(cfg)?;
    let (model, report) = match which {
        Which::Ampl => train_ampl(cfg, &pairs)?,
        Which::Ampf => {
            let ampl = MlpModel::load(&cfg.ampl_model)?;
            let (model, report, records) = train_ampf(cfg, &pairs, &ampl)?;
            let mut corpus = out.as_os_str().to_owned();
            corpus.push(".corpus.cpf");
            pipeline::write_corpus(&records, PathBuf::from(corpus))?;
            (model, report)
        }
    };
    write_text(out, &model.to_json()?)?;
    let mut loss = out.as_os_str().to_owned();
    loss.push(".loss.json");
    write_text(
        Path::new(&loss),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(report)
}

pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<SweepResult> {
    cfg.validate()?;
    let models = if cfg.scheme.values().contains(&Scheme::Proposed) {
        Some(Models::load(cfg)?)
    } else {
        None
    };
    let result = run_sweep(cfg, models.as_ref())?;
    write_text(out, &result.to_csv())?;
    write_metadata(out, "sweep", cfg)?;
    Ok(result)
}

pub fn cmd_bench(cfg: &ExperimentConfig, out: &Path) -> Result<BenchReport> {
    cfg.validate()?;
    let models = if cfg.scheme.values().contains(&Scheme::Proposed) {
        Some(Models::load(cfg)?)
    } else {
        None
    };
    let report = run_bench(cfg, models.as_ref())?;
    write_text(out, &report.to_csv())?;
    write_metadata(out, "bench", cfg)?;
    Ok(report)
}

/// Human-readable one-line summary per record.
pub fn describe_sweep(result: &SweepResult) -> String {
    let mut s = String::new();
    for r in &result.records {
        let _ = writeln!(
            s,
            "{:<11} snr={:>5} rho={:<5} c={:<4} it={:<3} nmse={:.4e} ±{:.1e} ber_fv={:.4}",
            r.scheme.name(),
            r.snr_db,
            r.rho,
            r.c,
            r.alpha_or_beta,
            r.mean_nmse,
            r.std_err,
            r.ber_fv
        );
    }
    s
}
