//! `MDL1` checkpoints.
//!
//! ```text
//! "MDL1" | u32 version | u32 entry_count
//! entry_count x (u32 name_len | name bytes | u32 ndim | ndim x u32 dim)
//! u64 param_count | param_count x f64      (theta, then phi)
//! ```
//!
//! The first entry, `meta.input`, holds the input `[height, width]` and owns
//! no payload. The remaining entries are the parameter layout in storage
//! order; the network shape is recovered from them.

use super::net::{Group, LayoutEntry, ModelParams};
use super::NetConfig;
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const MODEL_MAGIC: &[u8; 4] = b"MDL1";
pub const MODEL_VERSION: u32 = 1;
const INPUT_ENTRY: &str = "meta.input";

pub fn write_model(out: &mut impl Write, p: &ModelParams) -> Result<()> {
    let layout = p.layout();
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(layout.len() as u32 + 1).to_le_bytes());
    let mut entry = |name: &str, shape: &[usize]| {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
    };
    entry(INPUT_ENTRY, &[p.config.input_height, p.config.input_width]);
    for e in &layout {
        entry(&e.name, &e.shape);
    }
    buf.extend_from_slice(&(p.param_count() as u64).to_le_bytes());
    for v in p.theta.iter().chain(&p.phi) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("MDL1 truncated at byte {} (need {} more)", self.pos, n))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn config_from_entries(input: &[usize], entries: &[(String, Vec<usize>)]) -> Result<NetConfig> {
    let shape = |name: &str| {
        entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.clone())
            .ok_or_else(|| Error::Format(format!("MDL1 layout lacks '{}'", name)))
    };
    let dim = |s: &[usize], i: usize| {
        s.get(i)
            .copied()
            .ok_or_else(|| Error::Format(format!("MDL1 shape {:?} too short", s)))
    };
    if input.len() != 2 {
        return Err(Error::Format(format!("{} must have 2 dims, has {}", INPUT_ENTRY, input.len())));
    }
    let head_channels = dim(&shape("head.weight")?, 0)?;
    let fc1 = shape("fc1.weight")?;
    let pooled = dim(&fc1, 1)?;
    if head_channels == 0 || pooled % head_channels != 0 {
        return Err(Error::Format(format!("fc1 input {} not a multiple of {} head channels", pooled, head_channels)));
    }
    let cfg = NetConfig {
        input_height: input[0],
        input_width: input[1],
        enc1_channels: dim(&shape("enc1.weight")?, 0)?,
        enc2_channels: dim(&shape("enc2.weight")?, 0)?,
        recurrent: entries.iter().any(|(n, _)| n == "rec_z.weight"),
        dec_channels: dim(&shape("dec1.weight")?, 0)?,
        head_channels,
        head_bins: pooled / head_channels,
        head_hidden: dim(&fc1, 0)?,
    };
    cfg.validate().map_err(|e| Error::Format(format!("MDL1 describes an invalid network: {}", e)))?;
    Ok(cfg)
}

pub fn read_model(input: &mut impl Read) -> Result<ModelParams> {
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    let mut c = Cursor { buf: &raw, pos: 0 };
    let magic = c.take(4)?;
    if magic != MODEL_MAGIC {
        return Err(Error::Format(format!("expected magic \"MDL1\", found {:?}", String::from_utf8_lossy(magic))));
    }
    let version = c.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported MDL1 version {}", version)));
    }
    let n = c.u32()? as usize;
    let mut entries = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Format("MDL1 entry name is not UTF-8".into()))?
            .to_string();
        let ndim = c.u32()? as usize;
        let shape = (0..ndim).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        entries.push((name, shape));
    }
    let (first, rest) = entries
        .split_first()
        .filter(|(f, _)| f.0 == INPUT_ENTRY)
        .ok_or_else(|| Error::Format(format!("MDL1 must start with '{}'", INPUT_ENTRY)))?;
    let cfg = config_from_entries(&first.1, rest)?;
    let mut p = ModelParams::zeros(&cfg)?;
    let expected: Vec<(String, Vec<usize>)> = p.layout().into_iter().map(|LayoutEntry { name, shape, .. }| (name, shape)).collect();
    if expected.as_slice() != rest {
        return Err(Error::Format("MDL1 layout does not match a known network shape".into()));
    }
    let count = c.u64()? as usize;
    if count != p.param_count() {
        return Err(Error::Format(format!("MDL1 holds {} parameters, layout needs {}", count, p.param_count())));
    }
    let payload = c.take(count.checked_mul(8).ok_or_else(|| Error::Format("MDL1 count overflows".into()))?)?;
    if c.pos != raw.len() {
        return Err(Error::Format(format!("{} trailing bytes after MDL1 payload", raw.len() - c.pos)));
    }
    let mut values = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));
    for v in p.theta.iter_mut().chain(p.phi.iter_mut()) {
        *v = values.next().unwrap();
    }
    if !p.is_finite() {
        return Err(Error::Format("MDL1 contains non-finite parameters".into()));
    }
    debug_assert!(p.layout().iter().all(|e| matches!(e.group, Group::Theta | Group::Phi)));
    Ok(p)
}

pub fn save_model(path: &Path, p: &ModelParams) -> Result<()> {
    let mut buf = Vec::new();
    write_model(&mut buf, p)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    read_model(&mut std::fs::read(path)?.as_slice())
}
