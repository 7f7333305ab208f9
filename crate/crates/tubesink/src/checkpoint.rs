//! Single-file binary checkpoint: magic, version, the full resolved config
//! as JSON, then named parameter tensors, optimizer moments, and the RNG
//! state (derivation seed plus step counter). All integers and floats are
//! little-endian.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"TUBESINK";
pub const VERSION: u32 = 1;

const DTYPE_F64: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Resolved training config as JSON text.
    pub config_json: String,
    pub params: Vec<(String, Tensor)>,
    pub moments_m: Vec<(String, Tensor)>,
    pub moments_v: Vec<(String, Tensor)>,
    /// Stream-derivation seed; with `step` this is the complete RNG state.
    pub seed: u64,
    pub step: u64,
}

fn write_tensor(out: &mut impl Write, name: &str, tensor: &Tensor) -> Result<()> {
    out.write_all(&(name.len() as u32).to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    out.write_all(&[DTYPE_F64, 2u8])?;
    out.write_all(&(tensor.rows() as u64).to_le_bytes())?;
    out.write_all(&(tensor.cols() as u64).to_le_bytes())?;
    for &v in tensor.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_section(out: &mut impl Write, tensors: &[(String, Tensor)]) -> Result<()> {
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, tensor) in tensors {
        write_tensor(out, name, tensor)?;
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Parse("checkpoint truncated".into()));
        }
        let out = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name_len = self.u32()? as usize;
        let name = String::from_utf8(self.take(name_len)?.to_vec())
            .map_err(|_| Error::Parse("tensor name is not UTF-8".into()))?;
        let dtype = self.u8()?;
        if dtype != DTYPE_F64 {
            return Err(Error::Parse(format!("unsupported dtype tag {dtype}")));
        }
        let rank = self.u8()?;
        if rank != 2 {
            return Err(Error::Parse(format!("unsupported tensor rank {rank}")));
        }
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let payload = self.take(rows * cols * 8)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((name, Tensor::from_vec(rows, cols, data)))
    }

    fn section(&mut self) -> Result<Vec<(String, Tensor)>> {
        let count = self.u32()? as usize;
        (0..count).map(|_| self.tensor()).collect()
    }
}

pub fn save(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut out = Vec::new();
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(checkpoint.config_json.len() as u32).to_le_bytes())?;
    out.write_all(checkpoint.config_json.as_bytes())?;
    write_section(&mut out, &checkpoint.params)?;
    write_section(&mut out, &checkpoint.moments_m)?;
    write_section(&mut out, &checkpoint.moments_v)?;
    out.write_all(&checkpoint.seed.to_le_bytes())?;
    out.write_all(&checkpoint.step.to_le_bytes())?;
    fs::write(path, out)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, at: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Parse("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let config_len = r.u32()? as usize;
    let config_json = String::from_utf8(r.take(config_len)?.to_vec())
        .map_err(|_| Error::Parse("config payload is not UTF-8".into()))?;
    let params = r.section()?;
    let moments_m = r.section()?;
    let moments_v = r.section()?;
    let seed = r.u64()?;
    let step = r.u64()?;
    if r.at != bytes.len() {
        return Err(Error::Parse("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint { config_json, params, moments_m, moments_v, seed, step })
}
