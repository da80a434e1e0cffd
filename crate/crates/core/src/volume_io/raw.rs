//! Raw sidecar volume format.
//!
//! Layout (all little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `WSHV`                            |
//! | 4      | 2    | version (u16, currently 1)              |
//! | 6      | 2    | dtype code (u16): 1 = f32 HU, 2 = u8    |
//! | 8      | 12   | dims nx, ny, nz (u32 each)              |
//! | 20     | 24   | spacing sx, sy, sz in mm (f64 each)     |
//! | 44     | 20   | reserved, zero                          |
//! | 64     | ..   | voxel payload, x fastest                |

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{HuVolume, SegmentationMask};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"WSHV";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum DType {
    F32 = 1,
    U8 = 2,
}

impl DType {
    fn from_code(code: u16) -> Result<Self> {
        match code {
            1 => Ok(DType::F32),
            2 => Ok(DType::U8),
            other => Err(Error::UnsupportedDatatype { code: other as i32 }),
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawHeader {
    pub dtype: DType,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

impl RawHeader {
    pub fn to_bytes(&self) -> Result<[u8; HEADER_LEN]> {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&VERSION.to_le_bytes());
        out[6..8].copy_from_slice(&(self.dtype as u16).to_le_bytes());
        for (i, &d) in self.dims.iter().enumerate() {
            let d = u32::try_from(d).map_err(|_| Error::MalformedHeader {
                field: "dims",
                reason: format!("{d} does not fit in u32"),
            })?;
            out[8 + 4 * i..12 + 4 * i].copy_from_slice(&d.to_le_bytes());
        }
        for (i, s) in self.spacing.iter().enumerate() {
            out[20 + 8 * i..28 + 8 * i].copy_from_slice(&s.to_le_bytes());
        }
        Ok(out)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::MalformedHeader {
                field: "header",
                reason: format!("{} bytes, need {HEADER_LEN}", bytes.len()),
            });
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::MalformedHeader {
                field: "magic",
                reason: format!("{:?}", &bytes[0..4]),
            });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::MalformedHeader {
                field: "version",
                reason: format!("unsupported version {version}"),
            });
        }
        let dtype = DType::from_code(u16::from_le_bytes([bytes[6], bytes[7]]))?;
        let mut dims = [0usize; 3];
        for (i, d) in dims.iter_mut().enumerate() {
            let at = 8 + 4 * i;
            *d = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        }
        if dims.contains(&0) {
            return Err(Error::MalformedHeader {
                field: "dims",
                reason: format!("{dims:?} contains zero"),
            });
        }
        let mut spacing = [0f64; 3];
        for (i, s) in spacing.iter_mut().enumerate() {
            let at = 20 + 8 * i;
            *s = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        }
        Ok(Self {
            dtype,
            dims,
            spacing,
        })
    }

    fn payload_len(&self) -> usize {
        self.dims.iter().product::<usize>() * self.dtype.size()
    }
}

fn read_payload(path: &Path, expect: DType) -> Result<(RawHeader, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = RawHeader::parse(&bytes)?;
    if header.dtype != expect {
        return Err(Error::MalformedHeader {
            field: "dtype",
            reason: format!("expected {expect:?}, found {:?}", header.dtype),
        });
    }
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != header.payload_len() {
        return Err(Error::MalformedHeader {
            field: "payload",
            reason: format!(
                "{} bytes, dims imply {}",
                payload.len(),
                header.payload_len()
            ),
        });
    }
    Ok((header, payload.to_vec()))
}

pub fn read_volume(path: &Path) -> Result<HuVolume> {
    let (header, payload) = read_payload(path, DType::F32)?;
    let voxels = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    HuVolume::new(
        header.dims,
        header.spacing,
        voxels,
        super::source_id_from_path(path),
    )
}

pub fn read_mask(path: &Path) -> Result<SegmentationMask> {
    let (header, payload) = read_payload(path, DType::U8)?;
    SegmentationMask::new(header.dims, payload)
}

fn write_file(
    path: &Path,
    header: &RawHeader,
    payload: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&header.to_bytes()?)
        .map_err(|e| Error::io(path, e))?;
    payload(&mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_volume(vol: &HuVolume, path: &Path) -> Result<()> {
    let header = RawHeader {
        dtype: DType::F32,
        dims: vol.dims(),
        spacing: vol.spacing(),
    };
    write_file(path, &header, |w| {
        for v in vol.voxels() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    })
}

pub fn write_mask(mask: &SegmentationMask, path: &Path) -> Result<()> {
    let header = RawHeader {
        dtype: DType::U8,
        dims: mask.dims(),
        // masks carry no geometry of their own
        spacing: [1.0; 3],
    };
    write_file(path, &header, |w| w.write_all(mask.labels()))
}
