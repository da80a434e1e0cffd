//! NIfTI-1 single-file (`.nii`, `.nii.gz`) reading, plus a minimal writer.
//!
//! Only the header fields needed to recover calibrated 3D voxel data are
//! interpreted: dimensions, datatype, voxel offset, scaling and the
//! orientation affine. Axis order is normalized to (x, y, z) using the
//! dominant world axis of each voxel axis; no resampling is done.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{HuVolume, SegmentationMask};
use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
const MIN_VOX_OFFSET: usize = 352;
const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

/// Relative off-axis affine component above which a volume counts as oblique.
const OBLIQUE_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Datatype {
    U8 = 2,
    I16 = 4,
    I32 = 8,
    F32 = 16,
    F64 = 64,
    I8 = 256,
    U16 = 512,
    U32 = 768,
}

impl Datatype {
    fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => Datatype::U8,
            4 => Datatype::I16,
            8 => Datatype::I32,
            16 => Datatype::F32,
            64 => Datatype::F64,
            256 => Datatype::I8,
            512 => Datatype::U16,
            768 => Datatype::U32,
            other => return Err(Error::UnsupportedDatatype { code: other as i32 }),
        })
    }

    pub fn bitpix(self) -> i16 {
        match self {
            Datatype::U8 | Datatype::I8 => 8,
            Datatype::I16 | Datatype::U16 => 16,
            Datatype::I32 | Datatype::U32 | Datatype::F32 => 32,
            Datatype::F64 => 64,
        }
    }

    fn size(self) -> usize {
        self.bitpix() as usize / 8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Endian {
    Little,
    Big,
}

struct Fields<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Fields<'_> {
    fn i16(&self, at: usize) -> i16 {
        let b = [self.bytes[at], self.bytes[at + 1]];
        match self.endian {
            Endian::Little => i16::from_le_bytes(b),
            Endian::Big => i16::from_be_bytes(b),
        }
    }

    fn f32(&self, at: usize) -> f32 {
        let b: [u8; 4] = self.bytes[at..at + 4].try_into().unwrap();
        match self.endian {
            Endian::Little => f32::from_le_bytes(b),
            Endian::Big => f32::from_be_bytes(b),
        }
    }
}

/// The header fields this reader interprets.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiHeader {
    pub dims: [usize; 3],
    pub datatype: Datatype,
    pub pixdim: [f32; 4],
    pub vox_offset: usize,
    pub scl_slope: f32,
    pub scl_inter: f32,
    /// Rows of the voxel-to-world affine (sform, qform or pixdim fallback).
    pub affine: [[f64; 4]; 3],
    big_endian: bool,
}

impl NiftiHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::MalformedHeader {
                field: "sizeof_hdr",
                reason: format!("file has {} bytes, header needs {HEADER_SIZE}", bytes.len()),
            });
        }
        let size_bytes: [u8; 4] = bytes[0..4].try_into().unwrap();
        let endian = if i32::from_le_bytes(size_bytes) == HEADER_SIZE as i32 {
            Endian::Little
        } else if i32::from_be_bytes(size_bytes) == HEADER_SIZE as i32 {
            Endian::Big
        } else {
            return Err(Error::MalformedHeader {
                field: "sizeof_hdr",
                reason: format!("expected 348, found {}", i32::from_le_bytes(size_bytes)),
            });
        };
        let f = Fields { bytes, endian };

        let magic = &bytes[344..348];
        if magic == MAGIC_PAIR {
            return Err(Error::MalformedHeader {
                field: "magic",
                reason: "header/image pairs (.hdr/.img) are not supported".into(),
            });
        }
        if magic != MAGIC_SINGLE {
            return Err(Error::MalformedHeader {
                field: "magic",
                reason: format!("{magic:?} is not a NIfTI-1 magic"),
            });
        }

        let dim: Vec<i16> = (0..8).map(|i| f.i16(40 + 2 * i)).collect();
        let ndim = dim[0];
        if !(1..=7).contains(&ndim) {
            return Err(Error::MalformedHeader {
                field: "dim",
                reason: format!("dim[0] = {ndim} outside 1..=7"),
            });
        }
        let mut dims = [1usize; 3];
        for i in 0..ndim as usize {
            let d = dim[i + 1];
            if d < 1 {
                return Err(Error::MalformedHeader {
                    field: "dim",
                    reason: format!("dim[{}] = {d}", i + 1),
                });
            }
            if i < 3 {
                dims[i] = d as usize;
            } else if d > 1 {
                return Err(Error::MalformedHeader {
                    field: "dim",
                    reason: format!("only 3D volumes are supported, dim[{}] = {d}", i + 1),
                });
            }
        }

        let datatype = Datatype::from_code(f.i16(70))?;
        let bitpix = f.i16(72);
        if bitpix != datatype.bitpix() {
            return Err(Error::MalformedHeader {
                field: "bitpix",
                reason: format!("{bitpix} does not match datatype {datatype:?}"),
            });
        }

        let pixdim: [f32; 4] = std::array::from_fn(|i| f.f32(76 + 4 * i));
        for (i, p) in pixdim[1..4].iter().enumerate() {
            if !(p.is_finite() && *p != 0.0) {
                return Err(Error::MalformedHeader {
                    field: "pixdim",
                    reason: format!("pixdim[{}] = {p}", i + 1),
                });
            }
        }

        let vox_offset = f.f32(108);
        if !(vox_offset.is_finite() && vox_offset >= MIN_VOX_OFFSET as f32) {
            return Err(Error::MalformedHeader {
                field: "vox_offset",
                reason: format!("{vox_offset} is below {MIN_VOX_OFFSET}"),
            });
        }

        let qform_code = f.i16(252);
        let sform_code = f.i16(254);
        let affine = if sform_code > 0 {
            std::array::from_fn(|r| std::array::from_fn(|c| f.f32(280 + 16 * r + 4 * c) as f64))
        } else if qform_code > 0 {
            qform_affine(
                [f.f32(256), f.f32(260), f.f32(264)],
                [f.f32(268), f.f32(272), f.f32(276)],
                pixdim,
            )
        } else {
            let mut a = [[0.0; 4]; 3];
            for i in 0..3 {
                a[i][i] = pixdim[i + 1] as f64;
            }
            a
        };

        Ok(Self {
            dims,
            datatype,
            pixdim,
            vox_offset: vox_offset as usize,
            scl_slope: f.f32(112),
            scl_inter: f.f32(116),
            affine,
            big_endian: endian == Endian::Big,
        })
    }

    pub fn spacing(&self) -> [f64; 3] {
        [1, 2, 3].map(|i| self.pixdim[i].abs() as f64)
    }

    fn scaling(&self) -> Option<(f64, f64)> {
        let slope = self.scl_slope as f64;
        if slope == 0.0 || !slope.is_finite() {
            return None;
        }
        let inter = if self.scl_inter.is_finite() {
            self.scl_inter as f64
        } else {
            0.0
        };
        Some((slope, inter))
    }

    /// For each voxel axis, the world axis it mostly points along, plus
    /// whether any axis is noticeably oblique.
    fn dominant_axes(&self) -> ([usize; 3], bool) {
        let mut axes = [0usize; 3];
        let mut oblique = false;
        for (j, axis) in axes.iter_mut().enumerate() {
            let col: [f64; 3] = std::array::from_fn(|i| self.affine[i][j].abs());
            let (best, &peak) = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            *axis = best;
            if col
                .iter()
                .enumerate()
                .any(|(i, &v)| i != best && v > OBLIQUE_TOLERANCE * peak)
            {
                oblique = true;
            }
        }
        (axes, oblique)
    }
}

fn qform_affine(quat: [f32; 3], offset: [f32; 3], pixdim: [f32; 4]) -> [[f64; 4]; 3] {
    let [b, c, d] = quat.map(|v| v as f64);
    let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
    let rot = [
        [
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
        ],
        [
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
        ],
        [
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - c * c - b * b,
        ],
    ];
    let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
    let scale = [pixdim[1] as f64, pixdim[2] as f64, pixdim[3] as f64 * qfac];
    std::array::from_fn(|r| {
        let mut row = [0.0; 4];
        for cidx in 0..3 {
            row[cidx] = rot[r][cidx] * scale[cidx];
        }
        row[3] = offset[r] as f64;
        row
    })
}

fn load_bytes(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&bytes[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

/// Voxel values after scaling and axis normalization.
struct Decoded {
    dims: [usize; 3],
    spacing: [f64; 3],
    values: Vec<f64>,
}

fn decode(bytes: &[u8]) -> Result<Decoded> {
    let header = NiftiHeader::parse(bytes)?;
    let n: usize = header.dims.iter().product();
    let size = header.datatype.size();
    let start = header.vox_offset;
    let end = start + n * size;
    if bytes.len() < end {
        return Err(Error::MalformedHeader {
            field: "vox_offset",
            reason: format!("data needs bytes {start}..{end}, file has {}", bytes.len()),
        });
    }
    let data = &bytes[start..end];
    let big = header.big_endian;
    let mut values: Vec<f64> = data
        .chunks_exact(size)
        .map(|c| decode_value(header.datatype, c, big))
        .collect();
    if let Some((slope, inter)) = header.scaling() {
        for v in &mut values {
            *v = *v * slope + inter;
        }
    }

    let (axes, oblique) = header.dominant_axes();
    if oblique {
        log::warn!("oblique orientation; voxels kept on the acquisition grid without resampling");
    }
    let mut dims = header.dims;
    let mut spacing = header.spacing();
    let mut seen = [false; 3];
    axes.iter().for_each(|&a| seen[a] = true);
    if seen.iter().all(|&s| s) && axes != [0, 1, 2] {
        let (d, s, v) = permute_axes(header.dims, spacing, &values, axes);
        dims = d;
        spacing = s;
        values = v;
    } else if !seen.iter().all(|&s| s) {
        log::warn!("affine does not map voxel axes to distinct world axes; keeping stored order");
    }
    Ok(Decoded {
        dims,
        spacing,
        values,
    })
}

fn decode_value(dt: Datatype, c: &[u8], big: bool) -> f64 {
    macro_rules! num {
        ($t:ty) => {{
            let b = c.try_into().unwrap();
            (if big {
                <$t>::from_be_bytes(b)
            } else {
                <$t>::from_le_bytes(b)
            }) as f64
        }};
    }
    match dt {
        Datatype::U8 => c[0] as f64,
        Datatype::I8 => c[0] as i8 as f64,
        Datatype::I16 => num!(i16),
        Datatype::U16 => num!(u16),
        Datatype::I32 => num!(i32),
        Datatype::U32 => num!(u32),
        Datatype::F32 => num!(f32),
        Datatype::F64 => num!(f64),
    }
}

/// Reorders data so that stored voxel axis `j` becomes output axis `axes[j]`.
fn permute_axes(
    dims: [usize; 3],
    spacing: [f64; 3],
    values: &[f64],
    axes: [usize; 3],
) -> ([usize; 3], [f64; 3], Vec<f64>) {
    let mut out_dims = [0; 3];
    let mut out_spacing = [0.0; 3];
    for j in 0..3 {
        out_dims[axes[j]] = dims[j];
        out_spacing[axes[j]] = spacing[j];
    }
    let mut out = vec![0.0; values.len()];
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let src = [i, j, k];
                let mut dst = [0; 3];
                for a in 0..3 {
                    dst[axes[a]] = src[a];
                }
                let di = dst[0] + out_dims[0] * (dst[1] + out_dims[1] * dst[2]);
                out[di] = values[i + dims[0] * (j + dims[1] * k)];
            }
        }
    }
    (out_dims, out_spacing, out)
}

pub fn read_volume(path: &Path) -> Result<HuVolume> {
    let decoded = decode(&load_bytes(path)?)?;
    let voxels = decoded.values.iter().map(|&v| v as f32).collect();
    HuVolume::new(
        decoded.dims,
        decoded.spacing,
        voxels,
        super::source_id_from_path(path),
    )
}

pub fn read_mask(path: &Path) -> Result<SegmentationMask> {
    let decoded = decode(&load_bytes(path)?)?;
    let labels = decoded
        .values
        .iter()
        .map(|&v| {
            if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                Err(Error::InvalidLabel {
                    label: v as i64,
                    reason: format!("label value {v} is not an integer in 0..=255"),
                })
            } else {
                Ok(v as u8)
            }
        })
        .collect::<Result<Vec<u8>>>()?;
    SegmentationMask::new(decoded.dims, labels)
}

/// Voxel payload for [`NiftiImage`].
#[derive(Clone, Debug, PartialEq)]
pub enum StoredData {
    U8(Vec<u8>),
    I16(Vec<i16>),
    F32(Vec<f32>),
}

impl StoredData {
    fn datatype(&self) -> Datatype {
        match self {
            StoredData::U8(_) => Datatype::U8,
            StoredData::I16(_) => Datatype::I16,
            StoredData::F32(_) => Datatype::F32,
        }
    }

    fn len(&self) -> usize {
        match self {
            StoredData::U8(v) => v.len(),
            StoredData::I16(v) => v.len(),
            StoredData::F32(v) => v.len(),
        }
    }
}

/// Everything [`write`] needs to emit a little-endian NIfTI-1 file.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiImage {
    pub dims: [usize; 3],
    pub pixdim: [f32; 3],
    pub data: StoredData,
    pub scl_slope: f32,
    pub scl_inter: f32,
    /// sform rows; `None` writes a diagonal affine from `pixdim`.
    pub srow: Option<[[f32; 4]; 3]>,
}

impl NiftiImage {
    pub fn from_volume(vol: &HuVolume) -> Self {
        Self {
            dims: vol.dims(),
            pixdim: vol.spacing().map(|s| s as f32),
            data: StoredData::F32(vol.voxels().to_vec()),
            scl_slope: 1.0,
            scl_inter: 0.0,
            srow: None,
        }
    }

    pub fn from_mask(mask: &SegmentationMask, pixdim: [f32; 3]) -> Self {
        Self {
            dims: mask.dims(),
            pixdim,
            data: StoredData::U8(mask.labels().to_vec()),
            scl_slope: 1.0,
            scl_inter: 0.0,
            srow: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n: usize = self.dims.iter().product();
        if self.data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "dims {:?} imply {n} voxels, data has {}",
                self.dims,
                self.data.len()
            )));
        }
        let mut h = vec![0u8; MIN_VOX_OFFSET];
        let put_i16 =
            |h: &mut Vec<u8>, at: usize, v: i16| h[at..at + 2].copy_from_slice(&v.to_le_bytes());
        let put_f32 =
            |h: &mut Vec<u8>, at: usize, v: f32| h[at..at + 4].copy_from_slice(&v.to_le_bytes());
        h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
        put_i16(&mut h, 40, 3);
        for (i, &d) in self.dims.iter().enumerate() {
            let d = i16::try_from(d).map_err(|_| Error::MalformedHeader {
                field: "dim",
                reason: format!("{d} does not fit in i16"),
            })?;
            put_i16(&mut h, 42 + 2 * i, d);
        }
        for i in 3..7 {
            put_i16(&mut h, 42 + 2 * i, 1);
        }
        let dt = self.data.datatype();
        put_i16(&mut h, 70, dt as i16);
        put_i16(&mut h, 72, dt.bitpix());
        put_f32(&mut h, 76, 1.0);
        for (i, &p) in self.pixdim.iter().enumerate() {
            put_f32(&mut h, 80 + 4 * i, p);
        }
        put_f32(&mut h, 108, MIN_VOX_OFFSET as f32);
        put_f32(&mut h, 112, self.scl_slope);
        put_f32(&mut h, 116, self.scl_inter);
        h[123] = 2; // xyzt_units: mm
        put_i16(&mut h, 254, 1); // sform_code: scanner
        let srow = self.srow.unwrap_or_else(|| {
            let mut r = [[0.0; 4]; 3];
            for (i, row) in r.iter_mut().enumerate() {
                row[i] = self.pixdim[i];
            }
            r
        });
        for (r, row) in srow.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                put_f32(&mut h, 280 + 16 * r + 4 * c, v);
            }
        }
        h[344..348].copy_from_slice(MAGIC_SINGLE);
        match &self.data {
            StoredData::U8(v) => h.extend_from_slice(v),
            StoredData::I16(v) => v.iter().for_each(|x| h.extend_from_slice(&x.to_le_bytes())),
            StoredData::F32(v) => v.iter().for_each(|x| h.extend_from_slice(&x.to_le_bytes())),
        }
        Ok(h)
    }
}

/// Writes `image`, gzip-compressed when the path ends in `.gz`.
pub fn write(image: &NiftiImage, path: &Path) -> Result<()> {
    let bytes = image.to_bytes()?;
    let out = if path.to_string_lossy().ends_with(".gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(data: StoredData, dims: [usize; 3]) -> NiftiImage {
        NiftiImage {
            dims,
            pixdim: [0.8, 0.8, 2.5],
            data,
            scl_slope: 1.0,
            scl_inter: 0.0,
            srow: None,
        }
    }

    #[test]
    fn slope_and_intercept_are_applied() {
        let mut img = image(StoredData::I16(vec![512, 0, 1024, 100]), [2, 2, 1]);
        img.scl_slope = 2.0;
        img.scl_inter = -1024.0;
        let d = decode(&img.to_bytes().unwrap()).unwrap();
        assert_eq!(d.values, vec![0.0, -1024.0, 1024.0, -824.0]);
    }

    #[test]
    fn zero_slope_means_unscaled() {
        let mut img = image(StoredData::I16(vec![5, 6]), [2, 1, 1]);
        img.scl_slope = 0.0;
        img.scl_inter = 100.0;
        assert_eq!(
            decode(&img.to_bytes().unwrap()).unwrap().values,
            vec![5.0, 6.0]
        );
    }

    #[test]
    fn big_endian_headers_are_detected() {
        // Hand-built big-endian file, 1x1x1 int16 voxel of 300.
        let mut b = vec![0u8; 354];
        b[0..4].copy_from_slice(&348i32.to_be_bytes());
        b[40..42].copy_from_slice(&3i16.to_be_bytes());
        for i in 0..3 {
            b[42 + 2 * i..44 + 2 * i].copy_from_slice(&1i16.to_be_bytes());
        }
        b[70..72].copy_from_slice(&4i16.to_be_bytes());
        b[72..74].copy_from_slice(&16i16.to_be_bytes());
        for i in 0..4 {
            b[76 + 4 * i..80 + 4 * i].copy_from_slice(&1f32.to_be_bytes());
        }
        b[108..112].copy_from_slice(&352f32.to_be_bytes());
        b[344..348].copy_from_slice(MAGIC_SINGLE);
        b[352..354].copy_from_slice(&300i16.to_be_bytes());
        let d = decode(&b).unwrap();
        assert_eq!(d.values, vec![300.0]);
    }

    #[test]
    fn header_errors_name_fields() {
        let good = image(StoredData::U8(vec![0; 8]), [2, 2, 2])
            .to_bytes()
            .unwrap();

        let mut b = good.clone();
        b[0] = 0;
        assert!(matches!(
            NiftiHeader::parse(&b),
            Err(Error::MalformedHeader {
                field: "sizeof_hdr",
                ..
            })
        ));

        let mut b = good.clone();
        b[344..348].copy_from_slice(b"abcd");
        assert!(matches!(
            NiftiHeader::parse(&b),
            Err(Error::MalformedHeader { field: "magic", .. })
        ));

        let mut b = good.clone();
        b[344..348].copy_from_slice(MAGIC_PAIR);
        assert!(matches!(
            NiftiHeader::parse(&b),
            Err(Error::MalformedHeader { field: "magic", .. })
        ));

        let mut b = good.clone();
        b[70..72].copy_from_slice(&128i16.to_le_bytes());
        assert!(matches!(
            NiftiHeader::parse(&b),
            Err(Error::UnsupportedDatatype { code: 128 })
        ));

        let mut b = good.clone();
        b[72..74].copy_from_slice(&16i16.to_le_bytes());
        assert!(matches!(
            NiftiHeader::parse(&b),
            Err(Error::MalformedHeader {
                field: "bitpix",
                ..
            })
        ));

        let mut b = good.clone();
        b[40..42].copy_from_slice(&4i16.to_le_bytes());
        b[48..50].copy_from_slice(&3i16.to_le_bytes());
        assert!(matches!(
            NiftiHeader::parse(&b),
            Err(Error::MalformedHeader { field: "dim", .. })
        ));

        let mut b = good.clone();
        b[108..112].copy_from_slice(&100f32.to_le_bytes());
        assert!(matches!(
            NiftiHeader::parse(&b),
            Err(Error::MalformedHeader {
                field: "vox_offset",
                ..
            })
        ));

        let mut b = good.clone();
        b.truncate(355);
        assert!(matches!(
            decode(&b),
            Err(Error::MalformedHeader {
                field: "vox_offset",
                ..
            })
        ));
    }

    #[test]
    fn swapped_axes_are_normalized() {
        // Stored axis 0 runs along world y, stored axis 1 along world x.
        let dims = [2, 3, 1];
        let stored: Vec<u8> = (0..6).collect();
        let mut img = image(StoredData::U8(stored.clone()), dims);
        img.srow = Some([
            [0.0, 0.7, 0.0, 0.0],
            [0.9, 0.0, 0.0, 0.0],
            [0.0, 0.0, 2.0, 0.0],
        ]);
        img.pixdim = [0.9, 0.7, 2.0];
        let d = decode(&img.to_bytes().unwrap()).unwrap();
        assert_eq!(d.dims, [3, 2, 1]);
        assert_eq!(d.spacing, [0.7f32 as f64, 0.9f32 as f64, 2.0]);
        // stored (i, j) lands at output (j, i)
        for j in 0..3 {
            for i in 0..2 {
                assert_eq!(d.values[j + 3 * i], stored[i + 2 * j] as f64);
            }
        }
    }

    #[test]
    fn oblique_volumes_pass_through() {
        let mut img = image(StoredData::U8(vec![1, 2, 3, 4]), [2, 2, 1]);
        img.srow = Some([
            [0.95, 0.3, 0.0, 0.0],
            [-0.3, 0.95, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ]);
        let d = decode(&img.to_bytes().unwrap()).unwrap();
        assert_eq!(d.dims, [2, 2, 1]);
        assert_eq!(d.values, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn qform_identity_quaternion_keeps_order() {
        let a = qform_affine([0.0; 3], [0.0; 3], [1.0, 0.5, 0.5, 3.0]);
        assert_eq!(a[0][0], 0.5);
        assert_eq!(a[2][2], 3.0);
        assert_eq!(a[0][1], 0.0);
    }
}
