//! Binary checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      8 bytes  "PSPCKPT1"
//! version    u32
//! hidden_dim u64
//! tau        f64
//! seed       u64      pre-training seed, or the split seed once W is stored
//! n_mlp      u32      layer count, then n_mlp × (weight block, bias block)
//! n_gnn      u32      likewise
//! has_prompt u8       1 → W block, mask length u64, mask bytes (0/1)
//! ```
//!
//! A block is `byte_len u64` followed by `rows u64`, `cols u64` and
//! `rows·cols` f64 values; `byte_len` counts everything after itself.

use std::fs;
use std::path::Path;

use crate::encoders::{EncoderParams, Linear};
use crate::error::{PspError, Result};
use crate::optim::Param;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PSPCKPT1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PromptWeights {
    pub weights: Tensor,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub hidden_dim: usize,
    pub tau: f64,
    pub seed: u64,
    pub encoders: EncoderParams,
    pub prompt: Option<PromptWeights>,
}

fn put_block(out: &mut Vec<u8>, t: &Tensor) {
    let byte_len = 16 + 8 * t.data().len() as u64;
    out.extend_from_slice(&byte_len.to_le_bytes());
    out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ckpt.hidden_dim as u64).to_le_bytes());
    out.extend_from_slice(&ckpt.tau.to_le_bytes());
    out.extend_from_slice(&ckpt.seed.to_le_bytes());
    for layers in [&ckpt.encoders.mlp, &ckpt.encoders.gnn] {
        out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
        for l in layers.iter() {
            put_block(&mut out, &l.weight.value);
            put_block(&mut out, &l.bias.value);
        }
    }
    match &ckpt.prompt {
        Some(p) => {
            out.push(1);
            put_block(&mut out, &p.weights);
            out.extend_from_slice(&(p.mask.len() as u64).to_le_bytes());
            out.extend(p.mask.iter().map(|&m| m as u8));
        }
        None => out.push(0),
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(PspError::Format(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn block(&mut self) -> Result<Tensor> {
        let byte_len = self.u64()?;
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| PspError::Format(format!("block shape {rows}x{cols} overflows")))?;
        if byte_len != 16 + 8 * count as u64 {
            return Err(PspError::Format(format!(
                "block length {byte_len} disagrees with shape {rows}x{cols}"
            )));
        }
        let raw = self.take(8 * count)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::from_vec(rows, cols, data)
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(8).map_err(|_| PspError::Format("file too short for magic tag".into()))?;
    if magic != MAGIC {
        return Err(PspError::Format(format!("bad magic tag {:?}", String::from_utf8_lossy(magic))));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(PspError::Format(format!(
            "unsupported version {version}, this build reads version {VERSION}"
        )));
    }
    let hidden_dim = r.u64()? as usize;
    let tau = r.f64()?;
    let seed = r.u64()?;
    let mut read_layers = |prefix: &str| -> Result<Vec<Linear>> {
        let n = r.u32()? as usize;
        (0..n)
            .map(|i| {
                Ok(Linear {
                    weight: Param::new(format!("{prefix}.{i}.weight"), r.block()?),
                    bias: Param::new(format!("{prefix}.{i}.bias"), r.block()?),
                })
            })
            .collect()
    };
    let mlp = read_layers("mlp")?;
    let gnn = read_layers("gnn")?;
    let prompt = match r.u8()? {
        0 => None,
        1 => {
            let weights = r.block()?;
            let len = r.u64()? as usize;
            let mask = r
                .take(len)?
                .iter()
                .map(|&b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(PspError::Format(format!("mask byte {other} is not 0 or 1"))),
                })
                .collect::<Result<Vec<_>>>()?;
            if mask.len() != weights.rows() {
                return Err(PspError::Format(format!(
                    "mask has {} entries for {} weight rows",
                    mask.len(),
                    weights.rows()
                )));
            }
            Some(PromptWeights { weights, mask })
        }
        other => return Err(PspError::Format(format!("prompt flag {other} is not 0 or 1"))),
    };
    if r.pos != buf.len() {
        return Err(PspError::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(Checkpoint {
        hidden_dim,
        tau,
        seed,
        encoders: EncoderParams {
            mlp,
            gnn,
            hidden_dim,
            frozen: true,
        },
        prompt,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| PspError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path).map_err(|e| PspError::io(path, e))?;
    decode_checkpoint(&buf)
}
