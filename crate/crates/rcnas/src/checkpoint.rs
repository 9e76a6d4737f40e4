//! Binary parameter files and checkpoint directories.
//!
//! A parameter file is
//!
//! ```text
//! magic "RCNP" | version u32 | block count u32
//! per block: name length u32 | name utf-8 | rows u32 | cols u32
//! value count u64 | values f64 LE | sha256 of everything before it
//! ```
//!
//! Optimizer files use magic "RCNA" and hold lr, beta1, beta2, eps, t, then
//! the moment vectors. A checkpoint directory also holds `state.json`,
//! `cache.jsonl` and a `manifest.json` with the SHA-256 of every file.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rcnas_core::policy::Block;
use rcnas_core::{Adam, PolicyParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FORMAT_VERSION: u32 = 1;
const PARAMS_MAGIC: &[u8; 4] = b"RCNP";
const ADAM_MAGIC: &[u8; 4] = b"RCNA";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(String),
    #[error("{0}: not a parameter file or unsupported version")]
    Format(String),
    #[error("parameter layout in {0} does not match the policy")]
    Layout(String),
    #[error("invalid state: {0}")]
    State(String),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64s(&mut self, xs: &[f64]) {
        self.u64(xs.len() as u64);
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn finish(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.0);
        self.0.extend_from_slice(&digest);
        self.0
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl<'a> Reader<'a> {
    /// Verifies the trailing digest.
    fn new(bytes: &'a [u8], name: &'a str) -> Result<Self, CheckpointError> {
        if bytes.len() < 32 {
            return Err(CheckpointError::Format(name.into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CheckpointError::ChecksumMismatch(name.into()));
        }
        Ok(Self { buf: body, pos: 0, name })
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CheckpointError::Format(self.name.into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>, CheckpointError> {
        let n = self.u64()? as usize;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(CheckpointError::Format(self.name.into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn header(&mut self, magic: &[u8; 4]) -> Result<(), CheckpointError> {
        if self.take(4)? != magic || self.u32()? != FORMAT_VERSION {
            return Err(CheckpointError::Format(self.name.into()));
        }
        Ok(())
    }
    fn end(&self) -> Result<(), CheckpointError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(CheckpointError::Format(self.name.into()))
        }
    }
}

pub fn encode_params(blocks: &[Block], params: &PolicyParams) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(PARAMS_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(blocks.len() as u32);
    for b in blocks {
        w.u32(b.name.len() as u32);
        w.0.extend_from_slice(b.name.as_bytes());
        w.u32(b.rows as u32);
        w.u32(b.cols as u32);
    }
    w.f64s(&params.values);
    w.finish()
}

/// Decodes a parameter file, checking it against the expected layout.
pub fn decode_params(bytes: &[u8], blocks: &[Block], name: &str) -> Result<PolicyParams, CheckpointError> {
    let mut r = Reader::new(bytes, name)?;
    r.header(PARAMS_MAGIC)?;
    let layout = || CheckpointError::Layout(name.into());
    if r.u32()? as usize != blocks.len() {
        return Err(layout());
    }
    for b in blocks {
        let len = r.u32()? as usize;
        let n = r.take(len)?;
        if n != b.name.as_bytes() || r.u32()? as usize != b.rows || r.u32()? as usize != b.cols {
            return Err(layout());
        }
    }
    let values = r.f64s()?;
    r.end()?;
    if values.len() != blocks.iter().map(Block::len).sum::<usize>() {
        return Err(layout());
    }
    Ok(PolicyParams { values })
}

pub fn encode_adam(adam: &Adam) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(ADAM_MAGIC);
    w.u32(FORMAT_VERSION);
    for x in [adam.lr, adam.beta1, adam.beta2, adam.eps] {
        w.0.extend_from_slice(&x.to_le_bytes());
    }
    w.u64(adam.t);
    w.f64s(&adam.m);
    w.f64s(&adam.v);
    w.finish()
}

pub fn decode_adam(bytes: &[u8], name: &str) -> Result<Adam, CheckpointError> {
    let mut r = Reader::new(bytes, name)?;
    r.header(ADAM_MAGIC)?;
    let adam = Adam {
        lr: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
        t: r.u64()?,
        m: r.f64s()?,
        v: r.f64s()?,
    };
    r.end()?;
    if adam.m.len() != adam.v.len() {
        return Err(CheckpointError::Format(name.into()));
    }
    Ok(adam)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    files: BTreeMap<String, String>,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `files` into `dir` with a manifest. Files are written to a staging
/// directory first and swapped in, so an interrupted write leaves the previous
/// checkpoint intact.
pub fn write_dir(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<(), CheckpointError> {
    let staging = dir.with_extension("tmp");
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    let mut manifest = Manifest {
        version: FORMAT_VERSION,
        files: BTreeMap::new(),
    };
    for (name, bytes) in files {
        let mut f = fs::File::create(staging.join(name))?;
        f.write_all(bytes)?;
        f.sync_all()?;
        manifest.files.insert(name.to_string(), sha_hex(bytes));
    }
    let m = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    fs::write(staging.join("manifest.json"), m)?;
    if dir.exists() {
        let old = dir.with_extension("old");
        if old.exists() {
            fs::remove_dir_all(&old)?;
        }
        fs::rename(dir, &old)?;
        fs::rename(&staging, dir)?;
        fs::remove_dir_all(&old)?;
    } else {
        fs::rename(&staging, dir)?;
    }
    Ok(())
}

/// Reads every file listed in the manifest, verifying checksums.
pub fn read_dir(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, CheckpointError> {
    let text = fs::read(dir.join("manifest.json"))?;
    let manifest: Manifest =
        serde_json::from_slice(&text).map_err(|_| CheckpointError::Format("manifest.json".into()))?;
    if manifest.version != FORMAT_VERSION {
        return Err(CheckpointError::Format("manifest.json".into()));
    }
    let mut out = BTreeMap::new();
    for (name, sum) in manifest.files {
        let bytes = fs::read(dir.join(&name))?;
        if sha_hex(&bytes) != sum {
            return Err(CheckpointError::ChecksumMismatch(name));
        }
        out.insert(name, bytes);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rcnas_core::{PolicyConfig, PolicyNet, SearchSpace};

    fn net() -> PolicyNet {
        let config = PolicyConfig {
            embed_dim: 4,
            encoder_hidden: 5,
            controller_hidden: 6,
            init_range: 0.1,
        };
        PolicyNet::new(config, SearchSpace::kws_layers())
    }

    #[test]
    fn params_round_trip_bit_exactly() {
        let net = net();
        let mut p = net.init_params(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        p.values[0] = -0.0;
        p.values[1] = f64::MIN_POSITIVE / 3.0;
        p.values[2] = 1.0 / 3.0;
        let bytes = encode_params(net.blocks(), &p);
        let back = decode_params(&bytes, net.blocks(), "p").unwrap();
        let bits = |v: &PolicyParams| v.values.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&p));
        assert_eq!(encode_params(net.blocks(), &back), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let net = net();
        let p = net.zero_params();
        let mut bytes = encode_params(net.blocks(), &p);
        bytes[20] ^= 1;
        assert!(matches!(
            decode_params(&bytes, net.blocks(), "p"),
            Err(CheckpointError::ChecksumMismatch(_))
        ));
        let other = PolicyNet::new(PolicyConfig::default(), SearchSpace::kws_layers());
        let bytes = encode_params(net.blocks(), &p);
        assert!(matches!(
            decode_params(&bytes, other.blocks(), "p"),
            Err(CheckpointError::Layout(_))
        ));
    }

    #[test]
    fn adam_round_trip() {
        let mut a = Adam::new(3, 0.01);
        a.step(&mut [0.0; 3], &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(decode_adam(&encode_adam(&a), "a").unwrap(), a);
    }

    #[test]
    fn directory_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("ckpt");
        write_dir(&dir, &[("a.txt", b"one".to_vec()), ("b.txt", b"two".to_vec())]).unwrap();
        write_dir(&dir, &[("a.txt", b"three".to_vec())]).unwrap();
        let files = read_dir(&dir).unwrap();
        assert_eq!(files.len(), 1);
        assert_eq!(files["a.txt"], b"three");
        fs::write(dir.join("a.txt"), b"tampered").unwrap();
        assert!(matches!(read_dir(&dir), Err(CheckpointError::ChecksumMismatch(_))));
    }
}
