//! Little-endian binary containers for frames, depth maps and event streams.
//!
//! | magic  | header                                   | payload                                  |
//! |--------|------------------------------------------|------------------------------------------|
//! | `DPT1` | u32 width, u32 height, u64 timestamp_us  | width*height f32 depth (m), row-major    |
//! | `IMG1` | u32 width, u32 height, u64 timestamp_us  | width*height f32 intensity, row-major    |
//! | `EVS1` | u32 width, u32 height, u64 event_count   | event_count x (u64 t_us, u16 x, u16 y, i8 p) |

use crate::error::{Error, Result};
use crate::events::{to_micros, Event};
use crate::render::{DepthMap, Frame};
use std::io::{Read, Write};
use std::path::Path;

pub const DEPTH_MAGIC: &[u8; 4] = b"DPT1";
pub const IMAGE_MAGIC: &[u8; 4] = b"IMG1";
pub const EVENTS_MAGIC: &[u8; 4] = b"EVS1";
pub const EVENT_RECORD_BYTES: usize = 13;

fn write_grid(out: &mut impl Write, magic: &[u8; 4], w: usize, h: usize, t: f64, data: &[f32]) -> Result<()> {
    out.write_all(magic)?;
    out.write_all(&(w as u32).to_le_bytes())?;
    out.write_all(&(h as u32).to_le_bytes())?;
    out.write_all(&to_micros(t).to_le_bytes())?;
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_magic(input: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    input.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&m)
        )));
    }
    Ok(())
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(input: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_grid(input: &mut impl Read, magic: &[u8; 4]) -> Result<(usize, usize, f64, Vec<f32>)> {
    read_magic(input, magic)?;
    let w = read_u32(input)? as usize;
    let h = read_u32(input)? as usize;
    let t_us = read_u64(input)?;
    let n = w
        .checked_mul(h)
        .ok_or_else(|| Error::Format(format!("grid {}x{} overflows", w, h)))?;
    let mut raw = vec![0u8; n * 4];
    input.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((w, h, t_us as f64 / 1e6, data))
}

pub fn write_depth(out: &mut impl Write, d: &DepthMap) -> Result<()> {
    write_grid(out, DEPTH_MAGIC, d.width, d.height, d.t, &d.depth)
}

pub fn read_depth(input: &mut impl Read) -> Result<DepthMap> {
    let (width, height, t, depth) = read_grid(input, DEPTH_MAGIC)?;
    Ok(DepthMap {
        width,
        height,
        t,
        depth,
    })
}

pub fn write_image(out: &mut impl Write, f: &Frame) -> Result<()> {
    write_grid(out, IMAGE_MAGIC, f.width, f.height, f.t, &f.intensity)
}

pub fn read_image(input: &mut impl Read) -> Result<Frame> {
    let (width, height, t, intensity) = read_grid(input, IMAGE_MAGIC)?;
    Ok(Frame {
        width,
        height,
        t,
        intensity,
    })
}

/// An event stream with its sensor dimensions, as stored in `EVS1` files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventFile {
    pub width: usize,
    pub height: usize,
    pub events: Vec<Event>,
}

pub fn write_events(out: &mut impl Write, f: &EventFile) -> Result<()> {
    out.write_all(EVENTS_MAGIC)?;
    out.write_all(&(f.width as u32).to_le_bytes())?;
    out.write_all(&(f.height as u32).to_le_bytes())?;
    out.write_all(&(f.events.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(f.events.len() * EVENT_RECORD_BYTES);
    for e in &f.events {
        buf.extend_from_slice(&e.t.to_le_bytes());
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.extend_from_slice(&e.p.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_events(input: &mut impl Read) -> Result<EventFile> {
    read_magic(input, EVENTS_MAGIC)?;
    let width = read_u32(input)? as usize;
    let height = read_u32(input)? as usize;
    let count = read_u64(input)? as usize;
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    if raw.len() != count * EVENT_RECORD_BYTES {
        return Err(Error::Format(format!(
            "EVS1 header announces {} events but payload holds {} bytes",
            count,
            raw.len()
        )));
    }
    let events = raw
        .chunks_exact(EVENT_RECORD_BYTES)
        .map(|r| {
            let e = Event {
                t: u64::from_le_bytes(r[0..8].try_into().unwrap()),
                x: u16::from_le_bytes([r[8], r[9]]),
                y: u16::from_le_bytes([r[10], r[11]]),
                p: r[12] as i8,
            };
            if e.p.abs() != 1 {
                return Err(Error::Format(format!("invalid polarity {} at t={}", e.p, e.t)));
            }
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EventFile {
        width,
        height,
        events,
    })
}

pub fn save_depth(path: &Path, d: &DepthMap) -> Result<()> {
    let mut buf = Vec::new();
    write_depth(&mut buf, d)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_depth(path: &Path) -> Result<DepthMap> {
    read_depth(&mut std::fs::read(path)?.as_slice())
}

pub fn save_image(path: &Path, f: &Frame) -> Result<()> {
    let mut buf = Vec::new();
    write_image(&mut buf, f)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_image(path: &Path) -> Result<Frame> {
    read_image(&mut std::fs::read(path)?.as_slice())
}

pub fn save_events(path: &Path, f: &EventFile) -> Result<()> {
    let mut buf = Vec::new();
    write_events(&mut buf, f)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_events(path: &Path) -> Result<EventFile> {
    read_events(&mut std::fs::read(path)?.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_record_layout() {
        let f = EventFile {
            width: 346,
            height: 260,
            events: vec![Event {
                t: 0x0102_0304_0506_0708,
                x: 0x0a0b,
                y: 0x0c0d,
                p: -1,
            }],
        };
        let mut buf = Vec::new();
        write_events(&mut buf, &f).unwrap();
        assert_eq!(&buf[..4], b"EVS1");
        assert_eq!(buf.len(), 4 + 4 + 4 + 8 + 13);
        assert_eq!(&buf[20..28], &[8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(&buf[28..32], &[0x0b, 0x0a, 0x0d, 0x0c]);
        assert_eq!(buf[32], 0xff);
        assert_eq!(read_events(&mut buf.as_slice()).unwrap(), f);
    }

    #[test]
    fn grid_layout_and_errors() {
        let d = DepthMap {
            width: 2,
            height: 1,
            t: 0.5,
            depth: vec![1.5, 20.0],
        };
        let mut buf = Vec::new();
        write_depth(&mut buf, &d).unwrap();
        assert_eq!(&buf[..4], b"DPT1");
        assert_eq!(buf.len(), 4 + 4 + 4 + 8 + 8);
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 500_000);
        assert_eq!(read_depth(&mut buf.as_slice()).unwrap(), d);
        assert!(matches!(read_image(&mut buf.as_slice()), Err(Error::Format(_))));
        assert!(matches!(read_depth(&mut &buf[..10]), Err(Error::Io(_))));
    }

    #[test]
    fn bad_polarity_rejected() {
        let mut buf = Vec::new();
        write_events(
            &mut buf,
            &EventFile {
                width: 1,
                height: 1,
                events: vec![Event { t: 1, x: 0, y: 0, p: 1 }],
            },
        )
        .unwrap();
        *buf.last_mut().unwrap() = 0;
        assert!(matches!(read_events(&mut buf.as_slice()), Err(Error::Format(_))));
    }
}
