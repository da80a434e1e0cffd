//! NPY version 1.0 arrays: little-endian, C order.
//!
//! Images are written as `<f4`, label planes as `|u1`.

use std::path::Path;

use super::Plane;
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

fn header(descr: &str, shape: &[usize]) -> Vec<u8> {
    let shape_str = match shape {
        [n] => format!("({n},)"),
        dims => format!(
            "({})",
            dims.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut dict =
        format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_str}, }}");
    // magic(6) + version(2) + len(2) + dict + '\n' must be a multiple of 64
    let unpadded = 10 + dict.len() + 1;
    dict.extend(std::iter::repeat_n(' ', (64 - unpadded % 64) % 64));
    dict.push('\n');
    let mut out = Vec::with_capacity(10 + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

pub fn encode_f32(shape: &[usize], data: &[f32]) -> Vec<u8> {
    let mut out = header("<f4", shape);
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_u8(shape: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = header("|u1", shape);
    out.extend_from_slice(data);
    out
}

/// Writes a plane as a `(height, width)` float32 array.
pub fn write_plane_f32(plane: &Plane<f32>, path: &Path) -> Result<()> {
    let bytes = encode_f32(&[plane.height(), plane.width()], plane.as_slice());
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_plane_u8(plane: &Plane<u8>, path: &Path) -> Result<()> {
    let bytes = encode_u8(&[plane.height(), plane.width()], plane.as_slice());
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Parsed<'a> {
    descr: String,
    shape: Vec<usize>,
    payload: &'a [u8],
}

fn parse(bytes: &[u8]) -> Result<Parsed<'_>> {
    let bad = |reason: String| Error::MalformedHeader {
        field: "npy",
        reason,
    };
    if bytes.len() < 10 || &bytes[0..6] != MAGIC {
        return Err(bad("missing NPY magic".into()));
    }
    let (hlen, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 if bytes.len() >= 12 => (
            u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize,
            12,
        ),
        v => return Err(bad(format!("unsupported version {v}"))),
    };
    let dict = std::str::from_utf8(
        bytes
            .get(start..start + hlen)
            .ok_or_else(|| bad("truncated header".into()))?,
    )
    .map_err(|_| bad("header is not UTF-8".into()))?;
    let field = |key: &str| -> Result<&str> {
        let at = dict
            .find(key)
            .ok_or_else(|| bad(format!("missing {key}")))?;
        Ok(dict[at + key.len()..].trim_start_matches([':', ' ']))
    };
    let descr = field("'descr'")?;
    let descr = descr
        .trim_start_matches('\'')
        .split('\'')
        .next()
        .unwrap_or_default()
        .to_string();
    if field("'fortran_order'")?.starts_with("True") {
        return Err(bad("fortran order not supported".into()));
    }
    let shape_str = field("'shape'")?;
    let inner = shape_str
        .trim_start_matches('(')
        .split(')')
        .next()
        .unwrap_or_default();
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| bad(format!("bad shape entry {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Parsed {
        descr,
        shape,
        payload: &bytes[start + hlen..],
    })
}

fn read_plane<T>(
    path: &Path,
    descr: &str,
    size: usize,
    conv: impl Fn(&[u8]) -> T,
) -> Result<Plane<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let p = parse(&bytes)?;
    if p.descr != descr {
        return Err(Error::MalformedHeader {
            field: "npy",
            reason: format!("descr {} (expected {descr})", p.descr),
        });
    }
    let [h, w] = p.shape[..] else {
        return Err(Error::ShapeMismatch(format!(
            "expected 2D array, shape {:?}",
            p.shape
        )));
    };
    if p.payload.len() != h * w * size {
        return Err(Error::MalformedHeader {
            field: "npy",
            reason: format!("payload {} bytes for shape ({h}, {w})", p.payload.len()),
        });
    }
    Plane::new(w, h, p.payload.chunks_exact(size).map(conv).collect())
}

pub fn read_plane_f32(path: &Path) -> Result<Plane<f32>> {
    read_plane(path, "<f4", 4, |c| {
        f32::from_le_bytes(c.try_into().unwrap())
    })
}

pub fn read_plane_u8(path: &Path) -> Result<Plane<u8>> {
    read_plane(path, "|u1", 1, |c| c[0])
}
