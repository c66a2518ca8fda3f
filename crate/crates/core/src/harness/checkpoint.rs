//! Binary checkpoints.
//!
//! Layout, all integers little-endian: magic `AMCK`, `u32` version,
//! `u32`-prefixed UTF-8 config text, `u32` epoch, shuffle RNG state
//! (32-byte seed, `u64` stream, `u128` word position), `u32` tensor count,
//! then per tensor a `u32`-prefixed name, `u32` rank, `u32` dims and
//! row-major `f64` data. A SHA-256 digest of everything before it closes
//! the file.

use crate::params::{ModelParams, ModelShape};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"AMCK";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("bad magic {0:?}, expected \"AMCK\"")]
    Magic([u8; 4]),
    #[error("unsupported version {0}, expected {VERSION}")]
    Version(u32),
    #[error("file truncated while reading {0}")]
    Truncated(String),
    #[error("{0} trailing bytes after the last tensor")]
    Trailing(usize),
    #[error("checksum mismatch")]
    Checksum,
    #[error("config text is not UTF-8")]
    Utf8,
    #[error("tensor {name}: {len} values do not fill dims {dims:?}")]
    DataLength { name: String, dims: Vec<usize>, len: usize },
    #[error("tensor {name}: checkpoint dims {found:?} vs config dims {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("tensor list mismatch: checkpoint has {found:?}, config expects {expected:?}")]
    TensorNames { found: Vec<String>, expected: Vec<String> },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: String,
    pub epoch: u32,
    pub rng: RngState,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, config: String, epoch: u32, rng: RngState) -> Self {
        let tensors = params
            .tensors()
            .into_iter()
            .map(|t| NamedTensor {
                name: t.name.to_string(),
                dims: t.dims,
                data: t.data.to_vec(),
            })
            .collect();
        Self {
            version: VERSION,
            config,
            epoch,
            rng,
            tensors,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.version);
        put_bytes(&mut out, self.config.as_bytes());
        put_u32(&mut out, self.epoch);
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        put_u32(&mut out, self.tensors.len() as u32);
        for t in &self.tensors {
            put_bytes(&mut out, t.name.as_bytes());
            put_u32(&mut out, t.dims.len() as u32);
            for &d in &t.dims {
                put_u32(&mut out, d as u32);
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if &magic != MAGIC {
            return Err(CheckpointError::Magic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let config_len = r.u32("config length")? as usize;
        let config = std::str::from_utf8(r.take(config_len, "config text")?)
            .map_err(|_| CheckpointError::Utf8)?
            .to_string();
        let epoch = r.u32("epoch")?;
        let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().unwrap();
        let stream = u64::from_le_bytes(r.take(8, "rng stream")?.try_into().unwrap());
        let word_pos = u128::from_le_bytes(r.take(16, "rng position")?.try_into().unwrap());
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::new();
        for i in 0..count {
            let name_len = r.u32(&format!("tensor {i} name length"))? as usize;
            let name = std::str::from_utf8(r.take(name_len, &format!("tensor {i} name"))?)
                .map_err(|_| CheckpointError::Utf8)?
                .to_string();
            let rank = r.u32(&format!("{name} rank"))? as usize;
            let mut dims = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                dims.push(r.u32(&format!("{name} dims"))? as usize);
            }
            let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| CheckpointError::Truncated(format!("{name} data")))?;
            let raw = r.take(len * 8, &format!("{name} data"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor { name, dims, data });
        }
        let body = r.pos;
        match r.remaining() {
            n if n < DIGEST_LEN => return Err(CheckpointError::Truncated("checksum".into())),
            n if n > DIGEST_LEN => return Err(CheckpointError::Trailing(n - DIGEST_LEN)),
            _ => {}
        }
        if Sha256::digest(&bytes[..body]).as_slice() != &bytes[body..] {
            return Err(CheckpointError::Checksum);
        }
        Ok(Self {
            version,
            config,
            epoch,
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
            tensors,
        })
    }

    /// Copies the tensors into freshly shaped parameters, checking every
    /// name and dim against `shape`.
    pub fn to_params(&self, shape: ModelShape) -> Result<ModelParams, CheckpointError> {
        let mut params = ModelParams::zeros(shape);
        let mut slots = params.tensors_mut();
        let found: Vec<String> = self.tensors.iter().map(|t| t.name.clone()).collect();
        let expected: Vec<String> = slots.iter().map(|t| t.name.to_string()).collect();
        if found != expected {
            return Err(CheckpointError::TensorNames { found, expected });
        }
        for (slot, t) in slots.iter_mut().zip(&self.tensors) {
            if slot.dims != t.dims {
                return Err(CheckpointError::ShapeMismatch {
                    name: t.name.clone(),
                    found: t.dims.clone(),
                    expected: slot.dims.clone(),
                });
            }
            if t.data.len() != slot.data.len() {
                return Err(CheckpointError::DataLength {
                    name: t.name.clone(),
                    dims: t.dims.clone(),
                    len: t.data.len(),
                });
            }
            slot.data.copy_from_slice(&t.data);
        }
        drop(slots);
        Ok(params)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if n > self.remaining() {
            return Err(CheckpointError::Truncated(what.to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), CheckpointError> {
    crate::cache::write_atomic(path, &checkpoint.encode())
        .map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))?;
    Checkpoint::decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::{init_params, TrainConfig};
    use crate::params::AttentionMode;
    use rand::{RngCore, SeedableRng};

    fn shape(hidden: usize) -> ModelShape {
        ModelShape {
            num_channels: 2,
            window_len: 3,
            feat_dim: 4,
            num_bands: 4,
            hidden,
            num_classes: 3,
            attention: AttentionMode::Learned { phase: true },
        }
    }

    fn sample(hidden: usize) -> Checkpoint {
        let params = init_params(shape(hidden), &TrainConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        rng.set_stream(1);
        rng.next_u64();
        Checkpoint::new(&params, "model.hidden=8\n".into(), 3, RngState::capture(&rng))
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ck = sample(8);
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode(), bytes);
        let params = back.to_params(shape(8)).unwrap();
        assert_eq!(params, init_params(shape(8), &TrainConfig::default()));
    }

    #[test]
    fn rng_state_restores_the_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        rng.set_stream(1);
        for _ in 0..5 {
            rng.next_u32();
        }
        let mut restored = RngState::capture(&rng).restore();
        assert_eq!(restored.next_u64(), rng.next_u64());
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = sample(8).encode();
        for cut in 0..bytes.len() {
            let err = Checkpoint::decode(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, CheckpointError::Truncated(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn corruption_is_rejected() {
        let bytes = sample(8).encode();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad), Err(CheckpointError::Magic(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(Checkpoint::decode(&bad), Err(CheckpointError::Version(2))));
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(Checkpoint::decode(&bad), Err(CheckpointError::Trailing(1))));
        let mut bad = bytes.clone();
        let mid = bytes.len() - 100;
        bad[mid] ^= 0x01;
        assert!(matches!(Checkpoint::decode(&bad), Err(CheckpointError::Checksum)));
        let mut bad = bytes;
        let last = bad.len() - 1;
        bad[last] ^= 0xff;
        assert!(matches!(Checkpoint::decode(&bad), Err(CheckpointError::Checksum)));
    }

    #[test]
    fn hidden_size_mismatch_names_both_dims() {
        let err = sample(8).to_params(shape(4)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[8, 6]") && msg.contains("[4, 6]"), "{msg}");
        match err {
            CheckpointError::ShapeMismatch { found, expected, .. } => assert_ne!(found, expected),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn variant_mismatch_names_tensors() {
        let mut s = shape(8);
        s.attention = AttentionMode::Uniform;
        assert!(matches!(
            sample(8).to_params(s),
            Err(CheckpointError::TensorNames { .. })
        ));
    }
}
