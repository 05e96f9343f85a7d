//! Frame-stack files.
//!
//! A stack file is a 64-byte ASCII header followed by little-endian `f32`
//! samples in (axial, lateral, frame) order, axial fastest. The header holds
//! whitespace-separated fields, space padded and terminated by `\n`:
//!
//! ```text
//! AWS1 <nz> <nx> <nt> <pitch_um> <origin_z_mm> <origin_x_mm> <frame_rate_hz>
//! ```
//!
//! A sidecar `<file>.meta` holds `key=value` lines: `sequence`,
//! `frame_rate_hz`, `block_starts` (comma separated) and `frame_times`
//! (comma separated seconds). Without a sidecar, frames are assumed to be
//! uniformly spaced at the header frame rate.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::acoustics::grid::{FrameStack, Grid, SequenceKind, StackMeta};
use crate::geometry::Point;
use crate::{Error, Result};

pub const HEADER_LEN: usize = 64;
pub const MAGIC: &str = "AWS1";

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Formats the fixed-size header.
pub fn encode_header(stack: &FrameStack) -> Result<[u8; HEADER_LEN]> {
    let g = &stack.grid;
    let text = format!(
        "{MAGIC} {} {} {} {} {} {} {}",
        g.nz, g.nx, stack.nt, g.pitch_um, g.origin.z, g.origin.x, stack.meta.frame_rate_hz
    );
    if text.len() > HEADER_LEN - 1 {
        return Err(Error::Format(format!("header does not fit in {HEADER_LEN} bytes: {text}")));
    }
    let mut out = [b' '; HEADER_LEN];
    out[..text.len()].copy_from_slice(text.as_bytes());
    out[HEADER_LEN - 1] = b'\n';
    Ok(out)
}

/// Parsed header fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub grid: Grid,
    pub nt: usize,
    pub frame_rate_hz: f64,
}

pub fn decode_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_LEN || bytes[HEADER_LEN - 1] != b'\n' {
        return Err(Error::Format("truncated or unterminated header".into()));
    }
    let text = std::str::from_utf8(&bytes[..HEADER_LEN - 1])
        .map_err(|_| Error::Format("header is not ASCII text".into()))?;
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 8 || fields[0] != MAGIC {
        return Err(Error::Format(format!("bad header `{}`", text.trim_end())));
    }
    let int = |k: usize, name: &str| -> Result<usize> {
        fields[k]
            .parse::<usize>()
            .map_err(|_| Error::Format(format!("header field {name} = `{}` is not an integer", fields[k])))
    };
    let real = |k: usize, name: &str| -> Result<f64> {
        fields[k]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Format(format!("header field {name} = `{}` is not a number", fields[k])))
    };
    let nz = int(1, "nz")?;
    let nx = int(2, "nx")?;
    let nt = int(3, "nt")?;
    let pitch = real(4, "pitch")?;
    if !(pitch > 0.0) {
        return Err(Error::Format("header pitch must be > 0".into()));
    }
    let origin = Point::new(real(5, "origin_z")?, real(6, "origin_x")?);
    let frame_rate_hz = real(7, "frame_rate")?;
    Ok(Header {
        grid: Grid {
            nz,
            nx,
            pitch_um: pitch,
            origin,
        },
        nt,
        frame_rate_hz,
    })
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn encode_meta(stack: &FrameStack) -> String {
    format!(
        "sequence={}\nframe_rate_hz={}\nblock_starts={}\nframe_times={}\n",
        stack.meta.sequence.name(),
        stack.meta.frame_rate_hz,
        join(&stack.meta.block_starts),
        join(&stack.frame_times)
    )
}

/// Parses a sidecar; returns `(meta, frame_times)`.
pub fn decode_meta(text: &str) -> Result<(StackMeta, Vec<f64>)> {
    let mut meta = StackMeta::default();
    let mut times = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("meta line {}: expected key=value", n + 1)))?;
        let bad = |what: &str| Error::Format(format!("meta line {}: invalid {what}", n + 1));
        match k.trim() {
            "sequence" => meta.sequence = SequenceKind::parse(v).ok_or_else(|| bad("sequence"))?,
            "frame_rate_hz" => meta.frame_rate_hz = v.trim().parse().map_err(|_| bad("frame_rate_hz"))?,
            "block_starts" => {
                meta.block_starts = split_list(v)
                    .map(|s| s.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("block_starts"))?
            }
            "frame_times" => {
                times = split_list(v)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("frame_times"))?
            }
            _ => {}
        }
    }
    Ok((meta, times))
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

pub fn write_stack(path: &Path, stack: &FrameStack) -> Result<()> {
    stack.validate()?;
    let header = encode_header(stack)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::with_capacity(1 << 20, file);
    w.write_all(&header).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(1 << 16);
    for chunk in stack.data.chunks(1 << 14) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let mp = meta_path(path);
    std::fs::write(&mp, encode_meta(stack)).map_err(|e| Error::io(&mp, e))?;
    Ok(())
}

/// Reads only the header of a stack file.
pub fn read_header(path: &Path) -> Result<Header> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = [0u8; HEADER_LEN];
    f.read_exact(&mut h)
        .map_err(|_| Error::Format(format!("{}: file shorter than the header", path.display())))?;
    decode_header(&h)
}

pub fn read_stack(path: &Path) -> Result<FrameStack> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = BufReader::with_capacity(1 << 20, file);
    let mut h = [0u8; HEADER_LEN];
    r.read_exact(&mut h)
        .map_err(|_| Error::Format(format!("{}: file shorter than the header", path.display())))?;
    let header = decode_header(&h)?;
    let n = header
        .grid
        .nz
        .checked_mul(header.grid.nx)
        .and_then(|v| v.checked_mul(header.nt))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    if file_len != (HEADER_LEN + 4 * n) as u64 {
        return Err(Error::Format(format!(
            "{}: expected {} data bytes, found {}",
            path.display(),
            4 * n,
            file_len.saturating_sub(HEADER_LEN as u64)
        )));
    }
    let mut data = Vec::with_capacity(n);
    let mut buf = vec![0u8; 1 << 16];
    let mut left = n * 4;
    while left > 0 {
        let take = left.min(buf.len());
        r.read_exact(&mut buf[..take]).map_err(|e| Error::io(path, e))?;
        data.extend(buf[..take].chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])));
        left -= take;
    }
    let mp = meta_path(path);
    let (meta, frame_times) = match std::fs::read_to_string(&mp) {
        Ok(text) => decode_meta(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => (
            StackMeta {
                frame_rate_hz: header.frame_rate_hz,
                block_starts: vec![0],
                ..StackMeta::default()
            },
            Vec::new(),
        ),
        Err(e) => return Err(Error::io(&mp, e)),
    };
    let frame_times = if frame_times.is_empty() && header.nt > 0 {
        let fr = if header.frame_rate_hz > 0.0 { header.frame_rate_hz } else { 1.0 };
        (0..header.nt).map(|k| k as f64 / fr).collect()
    } else {
        frame_times
    };
    let stack = FrameStack {
        grid: header.grid,
        nt: header.nt,
        data,
        frame_times,
        meta,
    };
    stack.validate()?;
    Ok(stack)
}
