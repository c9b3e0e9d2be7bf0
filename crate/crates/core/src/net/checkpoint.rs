//! Binary checkpoint: magic, format version, a length-prefixed JSON header,
//! then every tensor as little-endian f64 in declared order, then a SHA-256 of
//! the tensor bytes.

use super::{ModelParams, NetConfig};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"SE3GRASP";
pub const FORMAT_VERSION: u32 = 1;

/// Which generative objective the weights were trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenMode {
    Score,
    Flow,
}

impl GenMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GenMode::Score => "score",
            GenMode::Flow => "flow",
        }
    }
}

impl std::str::FromStr for GenMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "score" | "sm" => Ok(GenMode::Score),
            "flow" | "fm" => Ok(GenMode::Flow),
            other => Err(Error::Parse(format!("unknown mode '{other}', expected score or flow"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    net: NetConfig,
    schedule: NoiseSchedule,
    mode: GenMode,
    tensors: Vec<(String, usize)>,
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub schedule: NoiseSchedule,
    pub mode: GenMode,
    /// Free-form provenance (seed, config hash, step count).
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let tensors = self.params.tensors();
        let header = Header {
            net: self.params.config.clone(),
            schedule: self.schedule,
            mode: self.mode,
            tensors: tensors.iter().map(|(n, t)| (n.clone(), t.len())).collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut hasher = Sha256::new();
        for (_, t) in &tensors {
            for v in t.iter() {
                let b = v.to_le_bytes();
                hasher.update(b);
                w.write_all(&b)?;
            }
        }
        w.write_all(&hasher.finalize())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("not a checkpoint file (bad magic)".into()));
        }
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b)?;
        let version = u32::from_le_bytes(u32b);
        if version != FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
        }
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u64b)?;
        let len = u64::from_le_bytes(u64b);
        if len > 1 << 24 {
            return Err(Error::Parse("checkpoint header too large".into()));
        }
        let mut json = vec![0u8; len as usize];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        let errs = header.net.validate();
        if !errs.is_empty() {
            return Err(Error::Parse(format!("checkpoint network config invalid: {}", errs.join("; "))));
        }
        let mut params = ModelParams::zeros(header.net.clone())?;
        let names = params.tensor_names();
        let expected: Vec<(String, usize)> =
            names.into_iter().zip(params.tensors().iter().map(|(_, t)| t.len())).collect();
        if expected != header.tensors {
            return Err(Error::Parse("checkpoint tensor layout does not match its network config".into()));
        }
        let mut hasher = Sha256::new();
        let mut buf = [0u8; 8];
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                r.read_exact(&mut buf)?;
                hasher.update(buf);
                *v = f64::from_le_bytes(buf);
            }
        }
        let mut digest = [0u8; 32];
        r.read_exact(&mut digest)?;
        if digest[..] != hasher.finalize()[..] {
            return Err(Error::Parse("checkpoint checksum mismatch".into()));
        }
        Ok(Self { params, schedule: header.schedule, mode: header.mode, meta: header.meta })
    }

    /// Writes through a sibling temp file and renames into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, |w| self.write_to(w))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = NetConfig { hidden: vec![8, 8], cond_dim: 5, ..NetConfig::default() };
        Checkpoint {
            params: ModelParams::new(cfg, &mut rng).unwrap(),
            schedule: NoiseSchedule::default(),
            mode: GenMode::Flow,
            meta: serde_json::json!({"seed": 9}),
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ck = sample();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&buf[..]).unwrap();
        assert_eq!(back, ck);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn corruption_is_detected() {
        let ck = sample();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        let n = bad.len();
        bad[n - 40] ^= 1;
        assert!(matches!(Checkpoint::read_from(&bad[..]), Err(Error::Parse(_))));
        assert!(Checkpoint::read_from(&buf[..n - 10]).is_err());
        let mut bad = buf;
        bad[0] = b'X';
        assert!(Checkpoint::read_from(&bad[..]).is_err());
        assert!("diffusion".parse::<GenMode>().is_err());
    }
}
