//! CT volumes, segmentation masks and the file formats they travel in.
//!
//! Voxels are stored x-fastest: index `x + nx * (y + ny * z)`. An axial slice
//! at depth `z` is therefore one contiguous run of `nx * ny` voxels, exposed
//! as a row-major [`Plane`] with `height = ny` rows of `width = nx`.

mod export;
pub mod nifti;
pub mod npy;
pub mod raw;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use export::{export_slices, SliceEntry, SliceManifest};

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_LIVER: u8 = 1;
pub const LABEL_TUMOR: u8 = 2;

/// Linear attenuation coefficients (1/cm) anchoring the Hounsfield scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttenuationCalibration {
    mu_water: f64,
    mu_air: f64,
}

impl AttenuationCalibration {
    pub fn new(mu_water: f64, mu_air: f64) -> Result<Self> {
        if !(mu_water.is_finite() && mu_air.is_finite()) {
            return Err(Error::Calibration(
                "attenuation coefficients must be finite".into(),
            ));
        }
        if !(mu_water > mu_air && mu_air >= 0.0) {
            return Err(Error::Calibration(format!(
                "need mu_water > mu_air >= 0, got mu_water={mu_water}, mu_air={mu_air}"
            )));
        }
        Ok(Self { mu_water, mu_air })
    }

    pub fn mu_water(&self) -> f64 {
        self.mu_water
    }

    pub fn mu_air(&self) -> f64 {
        self.mu_air
    }
}

/// Converts a linear attenuation coefficient to Hounsfield units.
pub fn hu_from_attenuation(mu: f64, cal: &AttenuationCalibration) -> Result<f64> {
    if !mu.is_finite() {
        return Err(Error::Calibration(format!(
            "attenuation {mu} is not finite"
        )));
    }
    Ok(1000.0 * ((mu - cal.mu_water) / (cal.mu_water - cal.mu_air)))
}

/// A 2D row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T> Plane<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ShapeMismatch(format!(
                "empty plane {height}x{width}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "plane {height}x{width} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn same_shape<U>(&self, other: &Plane<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Plane<U> {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Clone> Plane<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }
}

/// Calibrated CT volume in Hounsfield units.
#[derive(Clone, Debug, PartialEq)]
pub struct HuVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    voxels: Vec<f32>,
    source_id: String,
}

impl HuVolume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        voxels: Vec<f32>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        check_dims(dims, voxels.len())?;
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidVolume(format!(
                "spacing {spacing:?} must be positive"
            )));
        }
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume(format!("voxel {i} is not finite")));
        }
        Ok(Self {
            dims,
            spacing,
            voxels,
            source_id: source_id.into(),
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn with_source_id(mut self, source_id: impl Into<String>) -> Self {
        self.source_id = source_id.into();
        self
    }

    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn axial_slice(&self, z: usize) -> Plane<f32> {
        let n = self.slice_len();
        Plane {
            width: self.dims[0],
            height: self.dims[1],
            data: self.voxels[z * n..(z + 1) * n].to_vec(),
        }
    }
}

/// Integer label volume aligned with a [`HuVolume`].
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationMask {
    dims: [usize; 3],
    labels: Vec<u8>,
    class_names: BTreeMap<u8, String>,
}

pub fn default_class_names() -> BTreeMap<u8, String> {
    BTreeMap::from([
        (LABEL_LIVER, "liver".to_string()),
        (LABEL_TUMOR, "tumor".to_string()),
    ])
}

impl SegmentationMask {
    /// Mask with the liver/tumor label convention.
    pub fn new(dims: [usize; 3], labels: Vec<u8>) -> Result<Self> {
        Self::with_classes(dims, labels, default_class_names())
    }

    pub fn with_classes(
        dims: [usize; 3],
        labels: Vec<u8>,
        class_names: BTreeMap<u8, String>,
    ) -> Result<Self> {
        check_dims(dims, labels.len())?;
        if let Some(&bad) = labels
            .iter()
            .find(|&&l| l != LABEL_BACKGROUND && !class_names.contains_key(&l))
        {
            return Err(Error::InvalidLabel {
                label: bad as i64,
                reason: "not a known class".into(),
            });
        }
        Ok(Self {
            dims,
            labels,
            class_names,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn class_names(&self) -> &BTreeMap<u8, String> {
        &self.class_names
    }

    pub fn axial_slice(&self, z: usize) -> Plane<u8> {
        let n = self.dims[0] * self.dims[1];
        Plane {
            width: self.dims[0],
            height: self.dims[1],
            data: self.labels[z * n..(z + 1) * n].to_vec(),
        }
    }

    pub fn slice_contains(&self, z: usize, label: u8) -> bool {
        let n = self.dims[0] * self.dims[1];
        self.labels[z * n..(z + 1) * n].contains(&label)
    }

    pub fn check_aligned(&self, vol: &HuVolume) -> Result<()> {
        if self.dims != vol.dims {
            return Err(Error::DimensionMismatch {
                field: "dim",
                image: vol.dims,
                mask: self.dims,
            });
        }
        Ok(())
    }
}

fn check_dims(dims: [usize; 3], len: usize) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::InvalidVolume(format!(
            "dims {dims:?} must all be >= 1"
        )));
    }
    let expected = dims.iter().product::<usize>();
    if expected != len {
        return Err(Error::InvalidVolume(format!(
            "dims {dims:?} imply {expected} voxels, got {len}"
        )));
    }
    Ok(())
}

/// Source id of a volume file: the file name without its volume extension.
pub fn source_id_from_path(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    for ext in [".nii.gz", ".nii", ".wsv"] {
        if let Some(stem) = name.strip_suffix(ext) {
            return stem.to_string();
        }
    }
    name
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Nifti,
    Raw,
}

fn sniff_format(path: &Path) -> Result<Format> {
    let name = path.to_string_lossy();
    if name.ends_with(".wsv") {
        return Ok(Format::Raw);
    }
    if name.ends_with(".nii") || name.ends_with(".nii.gz") {
        return Ok(Format::Nifti);
    }
    // fall back to content sniffing
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&raw::MAGIC) {
        Ok(Format::Raw)
    } else {
        Ok(Format::Nifti)
    }
}

/// Reads an image volume and, when `mask_path` is given, its label volume.
pub fn read_volume(
    path: &Path,
    mask_path: Option<&Path>,
) -> Result<(HuVolume, Option<SegmentationMask>)> {
    let source_id = source_id_from_path(path);
    let vol = match sniff_format(path)? {
        Format::Raw => raw::read_volume(path)?,
        Format::Nifti => nifti::read_volume(path)?,
    }
    .with_source_id(source_id);
    let mask = match mask_path {
        Some(p) => {
            let mask = read_mask(p)?;
            mask.check_aligned(&vol)?;
            Some(mask)
        }
        None => None,
    };
    Ok((vol, mask))
}

pub fn read_mask(path: &Path) -> Result<SegmentationMask> {
    match sniff_format(path)? {
        Format::Raw => raw::read_mask(path),
        Format::Nifti => nifti::read_mask(path),
    }
}

/// Writes `vol` in the raw sidecar format.
pub fn write_volume(vol: &HuVolume, path: &Path) -> Result<()> {
    raw::write_volume(vol, path)
}

pub fn write_mask(mask: &SegmentationMask, path: &Path) -> Result<()> {
    raw::write_mask(mask, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cal() -> AttenuationCalibration {
        AttenuationCalibration::new(0.19, 0.0002).unwrap()
    }

    #[test]
    fn water_and_air_anchor_the_scale() {
        let c = cal();
        assert_eq!(hu_from_attenuation(c.mu_water(), &c).unwrap(), 0.0);
        assert_eq!(hu_from_attenuation(c.mu_air(), &c).unwrap(), -1000.0);
        let mid = (c.mu_water() + c.mu_air()) / 2.0;
        assert!((hu_from_attenuation(mid, &c).unwrap() + 500.0).abs() < 1e-9);
    }

    #[test]
    fn calibration_rejects_bad_inputs() {
        assert!(AttenuationCalibration::new(0.1, 0.2).is_err());
        assert!(AttenuationCalibration::new(0.1, -0.01).is_err());
        assert!(AttenuationCalibration::new(f64::NAN, 0.0).is_err());
        assert!(matches!(
            hu_from_attenuation(f64::INFINITY, &cal()),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn volume_invariants() {
        assert!(HuVolume::new([2, 2, 1], [1.0; 3], vec![0.0; 4], "a").is_ok());
        assert!(HuVolume::new([2, 2, 1], [1.0; 3], vec![0.0; 3], "a").is_err());
        assert!(HuVolume::new([0, 2, 1], [1.0; 3], vec![], "a").is_err());
        assert!(HuVolume::new([1, 1, 1], [1.0, 0.0, 1.0], vec![0.0], "a").is_err());
        assert!(HuVolume::new([1, 1, 1], [1.0; 3], vec![f32::NAN], "a").is_err());
    }

    #[test]
    fn mask_rejects_unknown_labels() {
        assert!(SegmentationMask::new([2, 1, 1], vec![0, 2]).is_ok());
        assert!(matches!(
            SegmentationMask::new([2, 1, 1], vec![0, 7]),
            Err(Error::InvalidLabel { label: 7, .. })
        ));
    }

    #[test]
    fn axial_slices_are_contiguous() {
        let vol =
            HuVolume::new([2, 2, 2], [1.0; 3], (0..8).map(|v| v as f32).collect(), "a").unwrap();
        assert_eq!(vol.axial_slice(1).as_slice(), &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(*vol.axial_slice(0).get(1, 1), 3.0);
    }

    #[test]
    fn source_ids_strip_volume_extensions() {
        assert_eq!(
            source_id_from_path(Path::new("/d/volume-3.nii.gz")),
            "volume-3"
        );
        assert_eq!(source_id_from_path(Path::new("case.nii")), "case");
        assert_eq!(source_id_from_path(Path::new("p-01.wsv")), "p-01");
    }
}
