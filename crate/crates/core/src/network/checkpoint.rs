//! Self-describing binary checkpoints.
//!
//! Layout (little endian): magic `SHARESSM`, `u32` version, `u32` length and
//! UTF-8 TOML of the model config, `u64` seed, `u32` tensor count, then per
//! tensor `u32` name length, name, `u8` role code, `u32` rank, `u64` dims,
//! `f64` data.

use std::io::{Read, Write};
use std::path::Path;

use super::params::{ParamStore, Role};
use super::{Model, ModelConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SHARESSM";
pub const VERSION: u32 = 1;

fn err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn role_code(role: Role) -> u8 {
    match role {
        Role::Weight => 0,
        Role::Bias => 1,
        Role::Omega => 2,
        Role::Dt => 3,
        Role::Threshold => 4,
        Role::Norm => 5,
        Role::Kernel => 6,
        Role::Buffer => 7,
    }
}

fn role_from_code(code: u8) -> Result<Role> {
    Ok(match code {
        0 => Role::Weight,
        1 => Role::Bias,
        2 => Role::Omega,
        3 => Role::Dt,
        4 => Role::Threshold,
        5 => Role::Norm,
        6 => Role::Kernel,
        7 => Role::Buffer,
        _ => return Err(err(format!("unknown parameter role {code}"))),
    })
}

/// Serializes a model together with the seed it was built from.
pub fn to_bytes(model: &Model, seed: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = model.config().to_toml();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    out.extend_from_slice(&seed.to_le_bytes());
    let params = model.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(role_code(p.role));
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &d in &p.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in &p.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| err(format!("truncated at byte {} (wanted {n} more)", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| err("string is not UTF-8"))
    }
}

/// Parses a checkpoint and rebuilds the model; returns it with its seed.
pub fn from_bytes(bytes: &[u8]) -> Result<(Model, u64)> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(err("bad magic"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let config = ModelConfig::from_toml(&c.string()?).map_err(|e| err(e.to_string()))?;
    let seed = c.u64()?;
    let n = c.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let name = c.string()?;
        let role = role_from_code(c.u8()?)?;
        let rank = c.u32()? as usize;
        let shape = (0..rank)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| err(format!("`{name}` shape overflows")))?;
        let raw = c.take(numel.checked_mul(8).ok_or_else(|| err("tensor too large"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        if store.find(&name).is_some() {
            return Err(err(format!("duplicate tensor `{name}`")));
        }
        store.push(name, shape, role, data);
    }
    if c.pos != bytes.len() {
        return Err(err(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let model = Model::from_params(config, store).map_err(|e| match e {
        Error::Checkpoint(_) => e,
        other => err(other.to_string()),
    })?;
    Ok((model, seed))
}

pub fn save(model: &Model, seed: u64, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
    f.write_all(&to_bytes(model, seed))
        .map_err(|e| err(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<(Model, u64)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| err(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Model {
        Model::new(ModelConfig::classification(2, 3, 4, 2, 2), 11).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = small();
        let (back, seed) = from_bytes(&to_bytes(&m, 11)).unwrap();
        assert_eq!(seed, 11);
        assert_eq!(back.params(), m.params());
        assert_eq!(back.config(), m.config());
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = to_bytes(&small(), 1);
        for cut in [0, 7, 12, bytes.len() - 1] {
            assert!(matches!(from_bytes(&bytes[..cut]), Err(Error::Checkpoint(_))));
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = to_bytes(&small(), 1);
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(Error::Checkpoint(_))));
    }
}
