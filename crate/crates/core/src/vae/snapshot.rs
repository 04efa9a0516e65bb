//! Binary model snapshots.
//!
//! Layout, little-endian throughout: the magic `CGV1`; a `u32` byte length
//! and the model configuration as `key=value` text; a `u32` array count;
//! then per array a `u32` name length, the UTF-8 name, a `u32` rank, the
//! `u64` extents and the `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::ModelParams;
use super::ModelConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CGV1";

pub fn write_snapshot<W: Write>(mut w: W, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    let text = cfg.to_text();
    w.write_all(MAGIC)?;
    w.write_all(&(text.len() as u32).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Snapshot(msg.into())
}

fn read_exact<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|_| bad(format!("truncated while reading {what}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<usize> {
    let b = read_exact(r, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let b = read_exact(r, 8, what)?;
    Ok(u64::from_le_bytes(b.try_into().unwrap()))
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<(ModelConfig, ModelParams)> {
    if read_exact(&mut r, 4, "magic")? != MAGIC {
        return Err(bad("bad magic"));
    }
    let len = read_u32(&mut r, "config length")?;
    let text = String::from_utf8(read_exact(&mut r, len, "config")?).map_err(|_| bad("config is not UTF-8"))?;
    let cfg = ModelConfig::from_text(&text)?;
    let count = read_u32(&mut r, "array count")?;
    let mut params = ModelParams::new();
    for _ in 0..count {
        let len = read_u32(&mut r, "name length")?;
        let name = String::from_utf8(read_exact(&mut r, len, "name")?).map_err(|_| bad("name is not UTF-8"))?;
        let rank = read_u32(&mut r, "rank")?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r, "extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = read_exact(&mut r, n * 8, &name)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        params.insert(name, Tensor::new(shape, data)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok((cfg, params))
}

pub fn save_snapshot(path: &Path, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    write_snapshot(BufWriter::new(File::create(path)?), cfg, params)
}

pub fn load_snapshot(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    read_snapshot(BufReader::new(File::open(path)?))
}
