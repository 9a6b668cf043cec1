//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `SLNP`, u32 format version, u32 block count,
//! then per block: u32 name length, UTF-8 name, u32 rank, u32 dims, f32 data.
//! Block names are `<component>/<parameter>`.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use super::params::{Block, Params};
use super::NppBank;

pub const MAGIC: &[u8; 4] = b"SLNP";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("block `{0}` missing from checkpoint")]
    Missing(String),
    #[error("block `{name}` has shape {found:?}, model expects {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

fn named_blocks(bank: &NppBank) -> Vec<(String, &Block)> {
    let mut out = Vec::new();
    for (name, net) in &bank.nets {
        for b in &net.params.blocks {
            out.push((format!("net:{name}/{}", b.name), b));
        }
    }
    for (name, c) in &bank.circuits {
        for b in &c.params().blocks {
            out.push((format!("circuit:{name}/{}", b.name), b));
        }
    }
    out
}

pub fn encode(bank: &NppBank) -> Vec<u8> {
    let blocks = named_blocks(bank);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (name, b) in blocks {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
        for &d in &b.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &b.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        if self.at + n > self.buf.len() {
            return Err(CheckpointError::Truncated(self.buf.len()));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

/// A decoded block: name, shape, values.
pub type RawBlock = (String, Vec<usize>, Vec<f32>);

/// Decode all blocks of a checkpoint.
pub fn decode(buf: &[u8]) -> Result<Vec<RawBlock>, CheckpointError> {
    let mut r = Reader { buf, at: 0 };
    if r.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let n = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = String::from_utf8_lossy(r.take(len)?).into_owned();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let data = r
            .take(count * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push((name, shape, data));
    }
    Ok(out)
}

/// Write atomically: a temporary file in the same directory, then rename.
pub fn save(bank: &NppBank, path: &Path) -> Result<(), CheckpointError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&encode(bank))?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Overwrite the parameters of `bank` with a checkpoint's values.
pub fn load(bank: &mut NppBank, path: &Path) -> Result<(), CheckpointError> {
    let blocks = decode(&fs::read(path)?)?;
    let lookup = |name: &str, expected: &[usize]| -> Result<Vec<f64>, CheckpointError> {
        let (_, shape, data) = blocks
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))?;
        if shape != expected {
            return Err(CheckpointError::Shape {
                name: name.to_string(),
                expected: expected.to_vec(),
                found: shape.clone(),
            });
        }
        Ok(data.iter().map(|&v| v as f64).collect())
    };
    let fill = |prefix: &str, params: &mut Params| -> Result<(), CheckpointError> {
        for b in &mut params.blocks {
            b.data = lookup(&format!("{prefix}/{}", b.name), &b.shape)?;
        }
        Ok(())
    };
    for (name, net) in &mut bank.nets {
        fill(&format!("net:{name}"), &mut net.params)?;
    }
    for (name, c) in &mut bank.circuits {
        fill(&format!("circuit:{name}"), c.params_mut())?;
    }
    bank.refresh();
    Ok(())
}
