//! Binary checkpoint format, version 1. All integers and floats are
//! little-endian.
//!
//! ```text
//! magic        8 bytes   "NGOBJCKP"
//! version      u32       1
//! vocab_size   u64
//! embed_dim    u64
//! max_src_len  u64
//! max_tgt_len  u64
//! init_scale   f64
//! tensors      u32 count, then per tensor:
//!                u32 name length, UTF-8 name, u64 rows, u64 cols,
//!                rows*cols f64 in row-major order
//! has_optim    u8        0 or 1; if 1:
//!   step         u64
//!   beta1, beta2, eps, weight_decay   f64 each
//!   first moments    tensor block as above
//!   second moments   tensor block as above
//! ```
//!
//! Tensors appear in the order embed, src_pos, tgt_pos, enc_w, enc_b,
//! query_w, key_w, value_w, out_w, out_b. Readers check names and shapes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::TENSOR_NAMES;
use super::{ModelConfig, ModelParams, OptimState};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"NGOBJCKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optim: Option<OptimState>,
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn write_tensors<W: Write>(w: &mut W, p: &ModelParams) -> Result<()> {
    let tensors = p.tensors();
    put_u32(w, tensors.len() as u32)?;
    for (name, m) in tensors {
        put_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        put_u64(w, m.rows() as u64)?;
        put_u64(w, m.cols() as u64)?;
        for &v in m.as_slice() {
            put_f64(w, v)?;
        }
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParams, optim: Option<&OptimState>) -> Result<()> {
    let c = &params.config;
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    for v in [c.vocab_size, c.embed_dim, c.max_source_len, c.max_target_len] {
        put_u64(&mut w, v as u64)?;
    }
    put_f64(&mut w, c.init_scale)?;
    write_tensors(&mut w, params)?;
    match optim {
        None => w.write_all(&[0])?,
        Some(o) => {
            w.write_all(&[1])?;
            put_u64(&mut w, o.step)?;
            for v in [o.beta1, o.beta2, o.eps, o.weight_decay] {
                put_f64(&mut w, v)?;
            }
            write_tensors(&mut w, &o.m)?;
            write_tensors(&mut w, &o.v)?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Checkpoint("truncated file".into()),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn tensors(&mut self, config: &ModelConfig) -> Result<ModelParams> {
        let mut p = ModelParams::zeros(config);
        let count = self.u32()? as usize;
        if count != TENSOR_NAMES.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {count}", TENSOR_NAMES.len())));
        }
        for (name, m) in TENSOR_NAMES.iter().zip(p.tensors_mut()) {
            let len = self.u32()? as usize;
            if len > 64 {
                return Err(Error::Checkpoint(format!("tensor name length {len} too long")));
            }
            let mut raw = vec![0u8; len];
            self.inner.read_exact(&mut raw).map_err(|_| Error::Checkpoint("truncated file".into()))?;
            if raw != name.as_bytes() {
                return Err(Error::Checkpoint(format!(
                    "expected tensor {name}, found {}",
                    String::from_utf8_lossy(&raw)
                )));
            }
            let shape = (self.usize()?, self.usize()?);
            if shape != m.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {shape:?}, config implies {:?}",
                    m.shape()
                )));
            }
            for v in m.as_mut_slice() {
                *v = self.f64()?;
            }
        }
        Ok(p)
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Checkpoint> {
    let mut r = Reader { inner: r };
    if &r.bytes::<8>()? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config = ModelConfig {
        vocab_size: r.usize()?,
        embed_dim: r.usize()?,
        max_source_len: r.usize()?,
        max_target_len: r.usize()?,
        init_scale: r.f64()?,
    };
    config.validate().map_err(|e| Error::Checkpoint(format!("bad config: {e}")))?;
    let params = r.tensors(&config)?;
    let optim = match r.bytes::<1>()?[0] {
        0 => None,
        1 => {
            let step = r.u64()?;
            let (beta1, beta2, eps, weight_decay) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
            let m = r.tensors(&config)?;
            let v = r.tensors(&config)?;
            Some(OptimState {
                step,
                beta1,
                beta2,
                eps,
                weight_decay,
                m,
                v,
            })
        }
        other => return Err(Error::Checkpoint(format!("bad optimizer flag {other}"))),
    };
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint { params, optim })
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, optim: Option<&OptimState>) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), params, optim)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
