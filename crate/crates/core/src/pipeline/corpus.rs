//! Training corpora for the two amplitude networks.
//!
//! Corpus files extend the `.cpd` record with three amplitude blocks:
//!
//! ```text
//! "CPF1", u32 N, u32 S, u64 count
//! count × record:
//!   <.cpd record>
//!   N × f32   initial amplitude (noiseless reconstruction)
//!   N × f32   auxiliary amplitude (amplitude-learning output)
//!   N × f32   target amplitude |h|
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::channel::dataset::{
    common_shape, get_pair, put_header, put_pair, read_header, record_len, Reader, HEADER_LEN,
};
use crate::channel::ChannelPair;
use crate::error::{Error, Result};
use crate::nn::{MlpModel, Samples};
use crate::onebit::{self, MeasurementMatrix};
use crate::rng;

use super::ampl_infer;

const MAGIC: &[u8; 4] = b"CPF1";

/// Row indices of a 70/15/15 split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle, then the first 70% train, the next 15% validate, the rest test.
pub fn split_indices(count: usize, seed: u64) -> Result<Split> {
    let n_train = count * 70 / 100;
    let n_val = count * 15 / 100;
    if n_train == 0 || n_val == 0 || count - n_train - n_val == 0 {
        return Err(Error::InvalidArgument(format!(
            "dataset of {count} samples is too small for a 70/15/15 split"
        )));
    }
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut rng::seeded(seed));
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(Split { train: idx, val, test })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSamples {
    pub train: Samples,
    pub val: Samples,
    pub test: Samples,
}

impl SplitSamples {
    pub fn from_split(all: &Samples, split: &Split) -> Self {
        let pick = |rows: &[usize]| Samples {
            inputs: all.inputs.select(ndarray::Axis(0), rows),
            targets: all.targets.select(ndarray::Axis(0), rows),
        };
        Self {
            train: pick(&split.train),
            val: pick(&split.val),
            test: pick(&split.test),
        }
    }
}

fn rows_to_array(rows: Vec<Vec<f64>>, width: usize) -> Array2<f64> {
    let count = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((count, width), flat).expect("rows share width")
}

/// `|ğ| → |h|` pairs.
pub fn ampl_corpus(pairs: &[ChannelPair]) -> Result<Samples> {
    let (n, _) = common_shape(pairs)?;
    let inputs = pairs.iter().map(|p| p.uplink_amplitude()).collect();
    let targets = pairs.iter().map(|p| p.downlink_amplitude()).collect();
    Ok(Samples {
        inputs: rows_to_array(inputs, n),
        targets: rows_to_array(targets, n),
    })
}

/// One corpus row: the pair with both amplitude features.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub pair: ChannelPair,
    pub initial: Vec<f64>,
    pub auxiliary: Vec<f64>,
    pub target: Vec<f64>,
}

/// Features for the fusion network from noiseless feedback.
pub fn corpus_records(
    pairs: &[ChannelPair],
    phi: &MeasurementMatrix,
    iterations: usize,
    step: f64,
    ampl: &MlpModel,
) -> Result<Vec<CorpusRecord>> {
    common_shape(pairs)?;
    pairs
        .par_iter()
        .map(|p| {
            let fv = onebit::quantize(&p.downlink_angular, phi, &p.support)?;
            let rec = onebit::sca_biht(&fv, phi, iterations, step)?;
            let auxiliary = ampl_infer(&p.uplink_angular, ampl)?;
            Ok(CorpusRecord {
                pair: p.clone(),
                initial: rec.amplitude,
                auxiliary,
                target: p.downlink_amplitude(),
            })
        })
        .collect()
}

/// Fusion-network samples from corpus rows.
pub fn records_to_samples(records: &[CorpusRecord], n: usize) -> Samples {
    let inputs = records
        .iter()
        .map(|r| r.initial.iter().chain(&r.auxiliary).copied().collect())
        .collect();
    let targets = records.iter().map(|r| r.target.clone()).collect();
    Samples {
        inputs: rows_to_array(inputs, 2 * n),
        targets: rows_to_array(targets, n),
    }
}

/// `[initial | auxiliary] → |h|` pairs.
pub fn ampf_corpus(
    pairs: &[ChannelPair],
    phi: &MeasurementMatrix,
    iterations: usize,
    ampl: &MlpModel,
) -> Result<Samples> {
    let (n, _) = common_shape(pairs)?;
    let records = corpus_records(pairs, phi, iterations, 1.0, ampl)?;
    Ok(records_to_samples(&records, n))
}

/// Both corpora over the same 70/15/15 split of `pairs`.
pub fn build_training_corpora(
    pairs: &[ChannelPair],
    phi: &MeasurementMatrix,
    iterations: usize,
    ampl: &MlpModel,
    split_seed: u64,
) -> Result<(SplitSamples, SplitSamples)> {
    let split = split_indices(pairs.len(), split_seed)?;
    let ampl_all = ampl_corpus(pairs)?;
    let ampf_all = ampf_corpus(pairs, phi, iterations, ampl)?;
    Ok((
        SplitSamples::from_split(&ampl_all, &split),
        SplitSamples::from_split(&ampf_all, &split),
    ))
}

pub fn encode_corpus(records: &[CorpusRecord]) -> Result<Vec<u8>> {
    let pairs: Vec<ChannelPair> = records.iter().map(|r| r.pair.clone()).collect();
    let (n, s) = common_shape(&pairs)?;
    let mut buf = Vec::with_capacity(HEADER_LEN + records.len() * (record_len(n) + 12 * n));
    put_header(&mut buf, MAGIC, n, s, records.len());
    for r in records {
        for (name, v) in [
            ("initial", &r.initial),
            ("auxiliary", &r.auxiliary),
            ("target", &r.target),
        ] {
            if v.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "{name} amplitude has length {}, expected {n}",
                    v.len()
                )));
            }
        }
        put_pair(&mut buf, &r.pair);
        for v in [&r.initial, &r.auxiliary, &r.target] {
            for x in v.iter() {
                buf.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
    }
    Ok(buf)
}

pub fn decode_corpus(bytes: &[u8]) -> Result<Vec<CorpusRecord>> {
    let mut r = Reader::new(bytes);
    let (n, s, count) = read_header(&mut r, MAGIC)?;
    let records = (0..count)
        .map(|_| {
            let pair = get_pair(&mut r, n, s)?;
            Ok(CorpusRecord {
                pair,
                initial: r.f32s(n)?,
                auxiliary: r.f32s(n)?,
                target: r.f32s(n)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(records)
}

pub fn write_corpus(records: &[CorpusRecord], path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    fs::write(path, encode_corpus(records)?).map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_corpus(&bytes)
}
