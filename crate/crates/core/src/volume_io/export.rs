use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{npy, HuVolume, SegmentationMask, LABEL_LIVER, LABEL_TUMOR};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub index: usize,
    pub liver_present: bool,
    pub tumor_present: bool,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceManifest {
    pub schema_version: u32,
    pub source_id: String,
    pub slices: Vec<SliceEntry>,
}

/// Writes every axial slice of `vol` as HU float32 NPY plus `<source_id>_slices.json`.
///
/// A slice counts as containing liver when any voxel is labeled liver or tumor.
pub fn export_slices(
    vol: &HuVolume,
    mask: Option<&SegmentationMask>,
    dir: &Path,
) -> Result<SliceManifest> {
    if let Some(m) = mask {
        m.check_aligned(vol)?;
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let id = vol.source_id();
    let mut slices = Vec::with_capacity(vol.dims()[2]);
    for z in 0..vol.dims()[2] {
        let file = format!("{id}_z{z:04}.npy");
        npy::write_plane_f32(&vol.axial_slice(z), &dir.join(&file))?;
        let tumor_present = mask.is_some_and(|m| m.slice_contains(z, LABEL_TUMOR));
        let liver_present = tumor_present || mask.is_some_and(|m| m.slice_contains(z, LABEL_LIVER));
        slices.push(SliceEntry {
            index: z,
            liver_present,
            tumor_present,
            file,
        });
    }
    let manifest = SliceManifest {
        schema_version: crate::SCHEMA_VERSION,
        source_id: id.to_string(),
        slices,
    };
    let path = dir.join(format!("{id}_slices.json"));
    let json = serde_json::to_vec_pretty(&manifest)?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
