//! Trained-model container and its binary weight file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "RAMP" | version: u32 | header_len: u32 | header JSON
//! repeated until EOF:
//!   name_len: u32 | name bytes | rank: u32 | dims: u64 * rank | f64 * prod(dims)
//! ```
//!
//! The schedule is stored as the tensor `schedule.beta`; everything else is a
//! network parameter.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nn::{EnergyNet, NetConfig, ParamStore};

pub const WEIGHT_MAGIC: &[u8; 4] = b"RAMP";
pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn write_tensor<W: Write>(w: &mut W, name: &str, t: &Tensor) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 if filled == 0 => return Ok(false),
            0 => return Err(Error::Format("truncated tensor record".into())),
            n => filled += n,
        }
    }
    Ok(true)
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated u32".into()))?;
    Ok(u32::from_le_bytes(b))
}

/// Reads one tensor record, or `None` at a clean end of input.
pub fn read_tensor<R: Read>(r: &mut R) -> Result<Option<(String, Tensor)>> {
    let mut b4 = [0u8; 4];
    if !read_exact_or_eof(r, &mut b4)? {
        return Ok(None);
    }
    let name_len = u32::from_le_bytes(b4) as usize;
    if name_len > 4096 {
        return Err(Error::Format(format!("tensor name length {name_len}")));
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name).map_err(|_| Error::Format("truncated name".into()))?;
    let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(Error::Format(format!("tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|_| Error::Format("truncated dims".into()))?;
        shape.push(u64::from_le_bytes(b8) as usize);
    }
    let n: usize = shape.iter().product();
    let mut raw = vec![0u8; n * 8];
    r.read_exact(&mut raw).map_err(|_| Error::Format(format!("truncated data for {name}")))?;
    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Some((name, Tensor::new(shape, data)?)))
}

/// Provenance stored in the weight-file header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub tool_version: String,
    pub d_space: usize,
    pub horizon: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub config_hash: String,
    /// Optimizer steps taken so far.
    pub train_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ParamStore,
    pub schedule: NoiseSchedule,
    pub meta: ModelMeta,
    checksum: Option<String>,
}

impl Model {
    /// Freshly initialized, unsealed model.
    pub fn init(config: NetConfig, n_steps: usize, seed: u64) -> Result<Self> {
        let schedule = NoiseSchedule::linear(n_steps)?;
        Ok(Model {
            params: ParamStore::init(config, seed),
            schedule,
            meta: ModelMeta {
                tool_version: TOOL_VERSION.into(),
                d_space: config.d_space,
                horizon: config.horizon,
                n_steps,
                seed,
                config_hash: String::new(),
                train_steps: 0,
            },
            checksum: None,
        })
    }

    pub fn config(&self) -> NetConfig {
        self.params.config
    }

    pub fn net(&self) -> EnergyNet {
        EnergyNet::new(&self.params)
    }

    /// Checksum of the serialized weights; absent until the model is sealed.
    pub fn checksum(&self) -> Option<&str> {
        self.checksum.as_deref()
    }

    /// Marks the current weights as final by recording their checksum.
    pub fn seal(mut self) -> Self {
        self.checksum = None;
        let bytes = self.to_bytes();
        self.checksum = Some(hex_digest(&bytes));
        self
    }

    pub fn with_params(&self, params: ParamStore) -> Self {
        Model { params, schedule: self.schedule.clone(), meta: self.meta.clone(), checksum: None }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHT_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&self.meta).expect("meta serializes");
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let beta = Tensor::new(vec![self.schedule.n_steps()], self.schedule.betas().to_vec()).expect("beta shape");
        write_tensor(&mut out, "schedule.beta", &beta).expect("write to vec");
        for (name, t) in self.params.iter() {
            write_tensor(&mut out, name, t).expect("write to vec");
        }
        out
    }

    /// Parses a weight file; the loaded model is sealed.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::Format("missing magic".into()))?;
        if &magic != WEIGHT_MAGIC {
            return Err(Error::Format("not a RAMP weight file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("weight format version {version}, expected {FORMAT_VERSION}")));
        }
        let hlen = read_u32(&mut r)? as usize;
        if hlen > r.len() {
            return Err(Error::Format("truncated header".into()));
        }
        let meta: ModelMeta = serde_json::from_slice(&r[..hlen])?;
        r = &r[hlen..];
        let mut named = BTreeMap::new();
        while let Some((name, t)) = read_tensor(&mut r)? {
            named.insert(name, t);
        }
        let beta = named.remove("schedule.beta").ok_or_else(|| Error::Format("missing schedule.beta".into()))?;
        let schedule = NoiseSchedule::from_betas(beta.into_data())?;
        let config = NetConfig::new(meta.d_space, meta.horizon);
        let params = ParamStore::from_tensors(config, named)?;
        Ok(Model { params, schedule, meta, checksum: Some(hex_digest(bytes)) })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_file_round_trips_bit_exactly() {
        let m = Model::init(NetConfig::new(2, 48), 100, 3).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"RAMP");
        let back = Model::from_bytes(&bytes).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.schedule, m.schedule);
        assert_eq!(back.to_bytes(), bytes);
        assert!(back.checksum().is_some());
        assert!(m.checksum().is_none());
        assert_eq!(m.clone().seal().checksum(), back.checksum());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = Model::init(NetConfig::new(2, 48), 10, 0).unwrap().to_bytes();
        assert!(Model::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Model::from_bytes(&bad).is_err());
        let mut wrong_version = bytes;
        wrong_version[4] = 9;
        assert!(Model::from_bytes(&wrong_version).is_err());
    }
}
