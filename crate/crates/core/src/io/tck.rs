//! MRtrix `.tck` streamline files.
//!
//! An ASCII header (`mrtrix tracks`, `key: value` lines, `END`) followed at
//! the byte offset named by `file: . <offset>` by float triplets. A NaN
//! triplet ends a streamline and an Inf triplet ends the file.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::transform::Point;

#[derive(Debug, Clone, PartialEq)]
pub struct TckData {
    pub header: BTreeMap<String, String>,
    pub streamlines: Vec<Vec<Point>>,
}

#[derive(Clone, Copy)]
enum DataType {
    F32(bool),
    F64(bool),
}

impl DataType {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "Float32LE" => Some(DataType::F32(true)),
            "Float32BE" => Some(DataType::F32(false)),
            "Float64LE" => Some(DataType::F64(true)),
            "Float64BE" => Some(DataType::F64(false)),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            DataType::F32(_) => 4,
            DataType::F64(_) => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            DataType::F32(le) => {
                let a = [b[0], b[1], b[2], b[3]];
                (if le { f32::from_le_bytes(a) } else { f32::from_be_bytes(a) }) as f64
            }
            DataType::F64(le) => {
                let a = [b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]];
                if le {
                    f64::from_le_bytes(a)
                } else {
                    f64::from_be_bytes(a)
                }
            }
        }
    }
}

/// Encodes streamlines as a Float32LE `.tck` byte stream.
pub fn encode<'a>(streamlines: impl IntoIterator<Item = &'a [Point]>, extra: &BTreeMap<String, String>) -> Vec<u8> {
    let lines: Vec<&[Point]> = streamlines.into_iter().collect();
    let mut fixed = String::from("mrtrix tracks\n");
    for (k, v) in extra {
        if k != "count" && k != "datatype" && k != "file" {
            fixed.push_str(&format!("{k}: {v}\n"));
        }
    }
    fixed.push_str(&format!("count: {}\n", lines.len()));
    fixed.push_str("datatype: Float32LE\n");
    // The offset counts its own digits.
    let mut offset = fixed.len() + "file: . \nEND\n".len() + 1;
    loop {
        let total = fixed.len() + format!("file: . {offset}\nEND\n").len();
        if total == offset {
            break;
        }
        offset = total;
    }
    let mut out = fixed.into_bytes();
    out.extend_from_slice(format!("file: . {offset}\nEND\n").as_bytes());
    debug_assert_eq!(out.len(), offset);
    let triplet = |out: &mut Vec<u8>, v: [f32; 3]| {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    for s in lines {
        for p in s {
            triplet(&mut out, [p[0] as f32, p[1] as f32, p[2] as f32]);
        }
        triplet(&mut out, [f32::NAN; 3]);
    }
    triplet(&mut out, [f32::INFINITY; 3]);
    out
}

pub fn write<'a>(path: &Path, streamlines: impl IntoIterator<Item = &'a [Point]>) -> Result<()> {
    let bytes = encode(streamlines, &BTreeMap::new());
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<TckData> {
    let bad = |reason: String| Error::format("tck", path, reason);
    let mut header = BTreeMap::new();
    let mut pos = 0usize;
    let mut first = true;
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("header not terminated by END".into()))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("non-ASCII header".into()))?;
        pos += end + 1;
        let line = line.trim_end_matches('\r');
        if first {
            if line != "mrtrix tracks" {
                return Err(bad(format!("bad magic line {line:?}")));
            }
            first = false;
            continue;
        }
        if line == "END" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            header.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let dtype = header
        .get("datatype")
        .ok_or_else(|| bad("missing datatype".into()))?;
    let dtype = DataType::parse(dtype).ok_or_else(|| bad(format!("unsupported datatype {dtype}")))?;
    let file = header.get("file").ok_or_else(|| bad("missing file field".into()))?;
    let offset: usize = file
        .strip_prefix('.')
        .map(str::trim)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("unsupported file field {file:?}")))?;
    if offset > bytes.len() {
        return Err(bad(format!("data offset {offset} past end of file")));
    }
    let w = dtype.width();
    let mut streamlines = Vec::new();
    let mut current = Vec::new();
    let mut terminated = false;
    for chunk in bytes[offset..].chunks(3 * w) {
        if chunk.len() < 3 * w {
            return Err(bad("trailing partial triplet".into()));
        }
        let v = [dtype.read(&chunk[..w]), dtype.read(&chunk[w..2 * w]), dtype.read(&chunk[2 * w..])];
        if v.iter().any(|x| x.is_nan()) {
            streamlines.push(std::mem::take(&mut current));
        } else if v.iter().any(|x| x.is_infinite()) {
            terminated = true;
            break;
        } else {
            current.push(Point::new(v[0], v[1], v[2]));
        }
    }
    if !current.is_empty() {
        streamlines.push(current);
    }
    if !terminated {
        log::warn!("{}: no end-of-file triplet", path.display());
    }
    if let Some(count) = header.get("count").and_then(|c| c.parse::<usize>().ok()) {
        if count != streamlines.len() {
            log::warn!("{}: header count {count} but {} streamlines read", path.display(), streamlines.len());
        }
    }
    Ok(TckData { header, streamlines })
}

pub fn read(path: &Path) -> Result<TckData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
