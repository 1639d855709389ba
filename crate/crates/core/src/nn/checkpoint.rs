//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "PAIRCKPT" | version u32 | meta_len u32 | meta (UTF-8 JSON)
//! param_count u32
//!   name_len u16 | name | trainable u8 | rank u8 | dims u32×rank | f32×numel
//! has_optimizer u8
//!   t u64 | lr f64 | beta1 f64 | beta2 f64 | eps f64
//!   first moments f32×numel per parameter | second moments likewise
//! rng: seed [u8; 32] | stream u64 | word_pos u128
//! sha256 of everything above
//! ```

use super::optim::{Adam, AdamConfig};
use super::params::ParamSet;
use super::Tensor;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PAIRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_RANK: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Position of a ChaCha8 generator, enough to resume the exact stream.
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
pub struct Checkpoint {
    /// Free-form JSON describing the model.
    pub meta: String,
    pub params: ParamSet,
    pub optimizer: Option<Adam>,
    pub rng: RngState,
}

fn put_f32s(out: &mut Vec<u8>, t: &Tensor) {
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Parameter and moment values are stored as `f32`; use [`quantize`] first
/// when a model must behave identically before and after a round trip.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(ckpt.meta.len() as u32).to_le_bytes());
    out.extend_from_slice(ckpt.meta.as_bytes());
    out.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    for p in ckpt.params.iter() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.trainable as u8);
        out.push(p.value.shape().len() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        put_f32s(&mut out, &p.value);
    }
    match &ckpt.optimizer {
        None => out.push(0),
        Some(adam) => {
            assert!(
                adam.m.len() == ckpt.params.len() && adam.v.len() == ckpt.params.len(),
                "optimizer moments must match the parameter list"
            );
            out.push(1);
            out.extend_from_slice(&adam.t.to_le_bytes());
            for v in [adam.config.lr, adam.config.beta1, adam.config.beta2, adam.config.eps] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for t in adam.m.iter().chain(&adam.v) {
                put_f32s(&mut out, t);
            }
        }
    }
    out.extend_from_slice(&ckpt.rng.seed);
    out.extend_from_slice(&ckpt.rng.stream.to_le_bytes());
    out.extend_from_slice(&ckpt.rng.word_pos.to_le_bytes());
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Rounds every parameter to the precision kept in a checkpoint.
pub fn quantize(params: &mut ParamSet) {
    for p in params.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn f32s(&mut self, shape: &[usize]) -> Result<Tensor, CheckpointError> {
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::Malformed("tensor size overflows".into()))?;
        if n.checked_mul(4).is_none_or(|bytes| bytes > self.remaining()) {
            return Err(CheckpointError::Truncated);
        }
        let bytes = self.take(n * 4)?;
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CheckpointError::Malformed("non-finite value".into()));
        }
        Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 8 + 4 + 32 {
        return Err(CheckpointError::Truncated);
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Checksum);
    }

    let meta_len = r.u32()? as usize;
    let meta = std::str::from_utf8(r.take(meta_len)?)
        .map_err(|_| CheckpointError::Malformed("meta is not UTF-8".into()))?
        .to_string();

    let count = r.u32()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Malformed("parameter name is not UTF-8".into()))?
            .to_string();
        let trainable = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(CheckpointError::Malformed(format!("trainable flag {other}"))),
        };
        let rank = r.u8()? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(CheckpointError::Malformed(format!("rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        if shape.contains(&0) {
            return Err(CheckpointError::Malformed(format!("empty axis in {shape:?}")));
        }
        let value = r.f32s(&shape)?;
        params
            .add(name, value, trainable)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    }

    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let t = r.u64()?;
            let config = AdamConfig {
                lr: r.f64()?,
                beta1: r.f64()?,
                beta2: r.f64()?,
                eps: r.f64()?,
            };
            let shapes: Vec<Vec<usize>> = params.iter().map(|p| p.value.shape().to_vec()).collect();
            let m = shapes.iter().map(|s| r.f32s(s)).collect::<Result<Vec<_>, _>>()?;
            let v = shapes.iter().map(|s| r.f32s(s)).collect::<Result<Vec<_>, _>>()?;
            Some(Adam { config, t, m, v })
        }
        other => return Err(CheckpointError::Malformed(format!("optimizer flag {other}"))),
    };

    let rng = RngState {
        seed: r.array()?,
        stream: r.u64()?,
        word_pos: u128::from_le_bytes(r.array()?),
    };
    if r.remaining() != 0 {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    Ok(Checkpoint {
        meta,
        params,
        optimizer,
        rng,
    })
}
