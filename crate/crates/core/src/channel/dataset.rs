//! `.cpd` channel-pair dataset files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "CPD1"            4 bytes
//! N                 u32
//! S                 u32
//! count             u64
//! count × record:
//!   N × (f32 re, f32 im)   downlink_angular
//!   N × (f32 re, f32 im)   uplink_spatial
//!   N × u8                 support (0/1)
//! ```
//!
//! The uplink angular form is recomputed on load.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use super::ChannelPair;
use crate::error::{Error, Result};

pub(crate) const MAGIC: &[u8; 4] = b"CPD1";
pub(crate) const HEADER_LEN: usize = 20;

pub(crate) fn record_len(n: usize) -> usize {
    n * 16 + n
}

pub(crate) fn put_complex(buf: &mut Vec<u8>, v: &[Complex64]) {
    for c in v {
        buf.extend_from_slice(&(c.re as f32).to_le_bytes());
        buf.extend_from_slice(&(c.im as f32).to_le_bytes());
    }
}

/// Cursor over a byte slice that reports failures with their offset.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(self.fail(format!(
                "truncated: need {len} bytes, {} left",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect())
    }

    pub(crate) fn complex(&mut self, n: usize) -> Result<Vec<Complex64>> {
        let flat = self.f32s(2 * n)?;
        Ok(flat.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
    }

    pub(crate) fn bits(&mut self, n: usize) -> Result<Vec<u8>> {
        let start = self.pos;
        let raw = self.take(n)?;
        if let Some(i) = raw.iter().position(|&b| b > 1) {
            return Err(Error::Format {
                offset: (start + i) as u64,
                message: format!("support byte {} is not 0 or 1", raw[i]),
            });
        }
        Ok(raw.to_vec())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

/// Checks that every pair shares the first pair's `N` and `S`.
pub(crate) fn common_shape(pairs: &[ChannelPair]) -> Result<(usize, usize)> {
    let Some(first) = pairs.first() else {
        return Ok((0, 0));
    };
    let (n, s) = (first.n(), first.sparsity);
    for p in pairs {
        if p.n() != n {
            return Err(Error::dim("pair length", n, p.n()));
        }
        if p.sparsity != s {
            return Err(Error::InvalidArgument(format!(
                "mixed sparsity in dataset: {s} and {}",
                p.sparsity
            )));
        }
        if p.uplink_spatial.len() != n || p.support.len() != n {
            return Err(Error::InvalidArgument("pair fields have inconsistent lengths".into()));
        }
    }
    Ok((n, s))
}

pub(crate) fn put_header(buf: &mut Vec<u8>, magic: &[u8; 4], n: usize, s: usize, count: usize) {
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(s as u32).to_le_bytes());
    buf.extend_from_slice(&(count as u64).to_le_bytes());
}

pub(crate) fn put_pair(buf: &mut Vec<u8>, p: &ChannelPair) {
    put_complex(buf, &p.downlink_angular);
    put_complex(buf, &p.uplink_spatial);
    buf.extend_from_slice(&p.support);
}

pub(crate) fn read_header(r: &mut Reader<'_>, magic: &[u8; 4]) -> Result<(usize, usize, usize)> {
    let m = r.take(4)?;
    if m != magic {
        return Err(Error::Format {
            offset: 0,
            message: format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(magic)
            ),
        });
    }
    let n = r.u32()? as usize;
    let s = r.u32()? as usize;
    let count = r.u64()? as usize;
    if count > 0 && (n == 0 || s == 0 || s > n) {
        return Err(Error::Format {
            offset: 4,
            message: format!("inconsistent header: N={n}, S={s}"),
        });
    }
    Ok((n, s, count))
}

pub(crate) fn get_pair(r: &mut Reader<'_>, n: usize, s: usize) -> Result<ChannelPair> {
    let downlink_angular = r.complex(n)?;
    let uplink_spatial = r.complex(n)?;
    let support = r.bits(n)?;
    ChannelPair::new(downlink_angular, uplink_spatial, support, s)
}

pub fn encode_dataset(pairs: &[ChannelPair]) -> Result<Vec<u8>> {
    let (n, s) = common_shape(pairs)?;
    let mut buf = Vec::with_capacity(HEADER_LEN + pairs.len() * record_len(n));
    put_header(&mut buf, MAGIC, n, s, pairs.len());
    for p in pairs {
        put_pair(&mut buf, p);
    }
    Ok(buf)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<ChannelPair>> {
    decode_checked(bytes, None)
}

fn decode_checked(bytes: &[u8], expected_n: Option<usize>) -> Result<Vec<ChannelPair>> {
    let mut r = Reader::new(bytes);
    let (n, s, count) = read_header(&mut r, MAGIC)?;
    if let Some(want) = expected_n {
        if count > 0 && n != want {
            return Err(Error::Format {
                offset: 4,
                message: format!("N mismatch: file has {n}, expected {want}"),
            });
        }
    }
    let need = count.saturating_mul(record_len(n));
    if bytes.len() - HEADER_LEN < need {
        return Err(Error::Format {
            offset: r.offset(),
            message: format!(
                "truncated: header promises {count} records ({need} bytes), {} present",
                bytes.len() - HEADER_LEN
            ),
        });
    }
    let pairs = (0..count).map(|_| get_pair(&mut r, n, s)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(pairs)
}

/// Writes `pairs` and returns how many records were written.
pub fn write_dataset(pairs: &[ChannelPair], path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let bytes = encode_dataset(pairs)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(pairs.len())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<ChannelPair>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

/// Like [`read_dataset`] but rejects files whose `N` differs from `n`.
pub fn read_dataset_with_n(path: impl AsRef<Path>, n: usize) -> Result<Vec<ChannelPair>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checked(&bytes, Some(n))
}
