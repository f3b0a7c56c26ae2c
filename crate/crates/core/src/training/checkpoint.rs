//! Binary checkpoint: `TSN1`, a u32-length-prefixed `key=value` config
//! header, then per parameter `name_len, name, rank, dims.., f32 data`.
//! Every integer and float is little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{NetworkConfig, Parameters, UNet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TSN1";

pub fn encode_checkpoint(params: &Parameters<f32>, cfg: &NetworkConfig) -> Vec<u8> {
    let header = cfg.to_key_values();
    let mut out = Vec::with_capacity(8 + header.len() + params.scalar_count() * 4);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, header.len());
    out.extend_from_slice(header.as_bytes());
    for (name, t) in params.iter() {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Parameters<f32>, NetworkConfig)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let header_len = r.u32()?;
    let header = std::str::from_utf8(r.take(header_len)?)
        .map_err(|_| Error::Format("config header is not UTF-8".into()))?;
    let cfg = NetworkConfig::from_key_values(header)?;
    let net = UNet::new(cfg.clone()).map_err(|e| Error::Format(format!("stored config is invalid: {e}")))?;

    let mut entries = Vec::new();
    while !r.done() {
        let name_len = r.u32()?;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let numel = numel.filter(|&n| n <= r.remaining() / 4).ok_or_else(truncated)?;
        let data = r
            .take(numel * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Format(format!("parameter {name}: {e}")))?;
        entries.push((name, t.with_requires_grad(true)));
    }

    let layout = net.layout();
    if entries.len() < layout.0.len()
        && entries
            .iter()
            .zip(&layout.0)
            .all(|((n, t), s)| *n == s.name && t.shape() == s.shape.as_slice())
    {
        return Err(truncated());
    }
    let params = Parameters::from_entries(entries).map_err(|e| Error::Format(e.to_string()))?;
    if !params.matches(&layout) {
        return Err(Error::ConfigMismatch(
            "stored parameters do not fit the stored network config".into(),
        ));
    }
    Ok((params, cfg))
}

pub fn save_checkpoint(params: &Parameters<f32>, cfg: &NetworkConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params, cfg)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Parameters<f32>, NetworkConfig)> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Loads a checkpoint and requires its config to equal `expected`.
pub fn load_checkpoint_into(path: impl AsRef<Path>, expected: &NetworkConfig) -> Result<Parameters<f32>> {
    let (params, cfg) = load_checkpoint(path)?;
    if cfg != *expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint holds {cfg:?}, expected {expected:?}"
        )));
    }
    Ok(params)
}

fn truncated() -> Error {
    Error::Format("checkpoint is truncated".into())
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("checkpoint field fits in u32");
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
