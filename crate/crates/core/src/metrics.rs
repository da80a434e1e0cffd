//! Segmentation overlap and liver/tumor contrast metrics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::augment::{intensity, BRIGHTNESS_RANGE, CONTRAST_RANGE, GAMMA_RANGE};
use crate::error::{Error, Result};
use crate::stats::exact_median;
use crate::volume_io::{HuVolume, SegmentationMask, LABEL_LIVER, LABEL_TUMOR};
use crate::windowing::{window_unit, Normalization, ViewingWindow, WindowShiftPolicy};

/// Default threshold below which a liver/tumor HU difference is hard.
pub const DIFFICULT_THRESHOLD_HU: f64 = 20.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiceCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl DiceCounts {
    pub fn from_masks(pred: &[bool], truth: &[bool]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::ShapeMismatch(format!(
                "prediction has {} voxels, truth {}",
                pred.len(),
                truth.len()
            )));
        }
        let mut c = Self::default();
        for (&p, &t) in pred.iter().zip(truth) {
            c.tp += (p && t) as u64;
            c.fp += (p && !t) as u64;
            c.fn_ += (!p && t) as u64;
        }
        Ok(c)
    }

    /// Counts for the union of `classes` in two label volumes.
    pub fn from_labels(
        pred: &SegmentationMask,
        truth: &SegmentationMask,
        classes: &BTreeSet<u8>,
    ) -> Result<Self> {
        if pred.dims() != truth.dims() {
            return Err(Error::DimensionMismatch {
                field: "dim",
                image: pred.dims(),
                mask: truth.dims(),
            });
        }
        let mut c = Self::default();
        for (p, t) in pred.labels().iter().zip(truth.labels()) {
            let (p, t) = (classes.contains(p), classes.contains(t));
            c.tp += (p && t) as u64;
            c.fp += (p && !t) as u64;
            c.fn_ += (!p && t) as u64;
        }
        Ok(c)
    }

    /// `2TP / (2TP + FP + FN)`; two empty masks score 1.
    pub fn dice(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

impl std::ops::Add for DiceCounts {
    type Output = Self;

    fn add(self, other: Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }
}

pub fn dice(pred: &[bool], truth: &[bool]) -> Result<f64> {
    DiceCounts::from_masks(pred, truth).map(|c| c.dice())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Average of per-volume scores.
    #[default]
    PerVolumeMean,
    /// One score from counts summed over all volumes.
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeDice {
    pub source_id: String,
    #[serde(flatten)]
    pub counts: DiceCounts,
    pub dice: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceReport {
    pub schema_version: u32,
    pub classes: BTreeSet<u8>,
    pub aggregation: Aggregation,
    /// The aggregate selected by `aggregation`.
    pub dice: f64,
    pub mean_dice: f64,
    pub pooled_dice: f64,
    #[serde(flatten)]
    pub pooled: DiceCounts,
    pub per_volume: Vec<VolumeDice>,
}

impl DiceReport {
    pub fn new(
        classes: BTreeSet<u8>,
        aggregation: Aggregation,
        volumes: Vec<(String, DiceCounts)>,
    ) -> Result<Self> {
        if volumes.is_empty() {
            return Err(Error::Data("dice report needs at least one volume".into()));
        }
        let per_volume: Vec<VolumeDice> = volumes
            .into_iter()
            .map(|(source_id, counts)| VolumeDice {
                source_id,
                counts,
                dice: counts.dice(),
            })
            .collect();
        let pooled = per_volume
            .iter()
            .fold(DiceCounts::default(), |a, v| a + v.counts);
        let mean_dice = per_volume.iter().map(|v| v.dice).sum::<f64>() / per_volume.len() as f64;
        let pooled_dice = pooled.dice();
        Ok(Self {
            schema_version: crate::SCHEMA_VERSION,
            classes,
            aggregation,
            dice: match aggregation {
                Aggregation::PerVolumeMean => mean_dice,
                Aggregation::Pooled => pooled_dice,
            },
            mean_dice,
            pooled_dice,
            pooled,
            per_volume,
        })
    }
}

/// Mean raw HU of healthy liver and of tumor voxels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HuDifference {
    pub mean_liver: f64,
    pub mean_tumor: f64,
    pub abs_diff: f64,
}

impl HuDifference {
    pub fn new(mean_liver: f64, mean_tumor: f64) -> Self {
        Self {
            mean_liver,
            mean_tumor,
            abs_diff: (mean_liver - mean_tumor).abs(),
        }
    }
}

/// Compares healthy liver (label 1 only) against tumor (label 2).
pub fn mean_hu_difference(vol: &HuVolume, mask: &SegmentationMask) -> Result<HuDifference> {
    mask.check_aligned(vol)?;
    let mut sum = [0.0f64; 2];
    let mut n = [0u64; 2];
    for (&v, &l) in vol.voxels().iter().zip(mask.labels()) {
        let k = match l {
            LABEL_LIVER => 0,
            LABEL_TUMOR => 1,
            _ => continue,
        };
        sum[k] += v as f64;
        n[k] += 1;
    }
    if n[0] == 0 {
        return Err(Error::ClassAbsent(LABEL_LIVER));
    }
    if n[1] == 0 {
        return Err(Error::ClassAbsent(LABEL_TUMOR));
    }
    Ok(HuDifference::new(
        sum[0] / n[0] as f64,
        sum[1] / n[1] as f64,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub source_id: String,
    pub mean_liver_hu: f64,
    pub mean_tumor_hu: f64,
    pub abs_diff_hu: f64,
    pub difficult: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub schema_version: u32,
    pub threshold_hu: f64,
    pub n_difficult: usize,
    /// Sorted by source id.
    pub per_volume: Vec<ContrastRow>,
    /// Volumes lacking liver or tumor voxels.
    pub not_evaluable: Vec<String>,
}

impl ContrastReport {
    pub fn difficult(&self) -> impl Iterator<Item = &ContrastRow> {
        self.per_volume.iter().filter(|r| r.difficult)
    }
}

/// Flags volumes whose liver/tumor difference is strictly below `threshold_hu`.
/// `None` entries are listed as not evaluable.
pub fn identify_difficult(
    measurements: impl IntoIterator<Item = (String, Option<HuDifference>)>,
    threshold_hu: f64,
) -> Result<ContrastReport> {
    if !threshold_hu.is_finite() {
        return Err(Error::Config(format!(
            "threshold {threshold_hu} HU is not finite"
        )));
    }
    let mut per_volume = Vec::new();
    let mut not_evaluable = Vec::new();
    for (source_id, m) in measurements {
        match m {
            Some(d) => per_volume.push(ContrastRow {
                source_id,
                mean_liver_hu: d.mean_liver,
                mean_tumor_hu: d.mean_tumor,
                abs_diff_hu: d.abs_diff,
                difficult: d.abs_diff < threshold_hu,
            }),
            None => {
                log::warn!(
                    "{source_id}: liver or tumor missing, excluded from contrast statistics"
                );
                not_evaluable.push(source_id);
            }
        }
    }
    per_volume.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    not_evaluable.sort();
    Ok(ContrastReport {
        schema_version: crate::SCHEMA_VERSION,
        threshold_hu,
        n_difficult: per_volume.iter().filter(|r| r.difficult).count(),
        per_volume,
        not_evaluable,
    })
}

/// Liver/tumor separation of one volume under one intensity scheme, in
/// unit-scaled (window) coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationRow {
    pub source_id: String,
    pub scheme: String,
    pub parameter: f64,
    pub mean_liver: f64,
    pub mean_tumor: f64,
    pub separation: f64,
}

fn class_means(values: &[f32], mask: &SegmentationMask) -> Result<(f64, f64)> {
    let mut sum = [0.0f64; 2];
    let mut n = [0u64; 2];
    for (&v, &l) in values.iter().zip(mask.labels()) {
        let k = match l {
            LABEL_LIVER => 0,
            LABEL_TUMOR => 1,
            _ => continue,
        };
        sum[k] += v as f64;
        n[k] += 1;
    }
    if n[0] == 0 {
        return Err(Error::ClassAbsent(LABEL_LIVER));
    }
    if n[1] == 0 {
        return Err(Error::ClassAbsent(LABEL_TUMOR));
    }
    Ok((sum[0] / n[0] as f64, sum[1] / n[1] as f64))
}

/// Level of the window centred on the volume's healthy-liver median, kept
/// inside the shift range.
pub fn liver_centred_level(
    vol: &HuVolume,
    mask: &SegmentationMask,
    shift: &WindowShiftPolicy,
) -> Result<f64> {
    mask.check_aligned(vol)?;
    let mut liver: Vec<f32> = vol
        .voxels()
        .iter()
        .zip(mask.labels())
        .filter(|(_, &l)| l == LABEL_LIVER)
        .map(|(&v, _)| v)
        .collect();
    if liver.is_empty() {
        return Err(Error::ClassAbsent(LABEL_LIVER));
    }
    Ok(exact_median(&mut liver).clamp(shift.level_low, shift.level_high))
}

/// Separation of mean unit-scaled liver and tumor intensity for the base
/// window, shifted windows and each baseline intensity augmentation at both
/// ends of its range. The whole volume is treated as one array; z-scored
/// results are mapped back to the unit scale with `norm`.
pub fn separation_by_scheme(
    vol: &HuVolume,
    mask: &SegmentationMask,
    base: &ViewingWindow,
    shift: &WindowShiftPolicy,
    norm: &Normalization,
) -> Result<Vec<SeparationRow>> {
    mask.check_aligned(vol)?;
    let mut rows = Vec::new();
    let mut push = |scheme: &str, parameter: f64, unit: &[f32]| -> Result<()> {
        let (l, t) = class_means(unit, mask)?;
        rows.push(SeparationRow {
            source_id: vol.source_id().to_string(),
            scheme: scheme.to_string(),
            parameter,
            mean_liver: l,
            mean_tumor: t,
            separation: (l - t).abs(),
        });
        Ok(())
    };
    let base_unit = window_unit(vol.voxels(), base);
    push("base_window", base.level(), &base_unit)?;
    let centred = liver_centred_level(vol, mask, shift)?;
    for (scheme, level) in [
        ("window_shift_liver_centred", centred),
        ("window_shift_low", shift.level_low),
        ("window_shift_high", shift.level_high),
    ] {
        push(
            scheme,
            level,
            &window_unit(vol.voxels(), &base.with_level(level)?),
        )?;
    }
    let (a_low, a_high) = crate::augment::equivalent_alpha_range(shift, base);
    for alpha in [a_low, a_high] {
        let mut x = base_unit.clone();
        intensity::additive_brightness(&mut x, alpha);
        push("additive_brightness", alpha, &x)?;
    }
    for g in GAMMA_RANGE {
        let mut x = base_unit.clone();
        intensity::gamma(&mut x, g)?;
        push("gamma", g, &x)?;
        let mut x = base_unit.clone();
        intensity::gamma_inverse(&mut x, g)?;
        push("gamma_inverse", g, &x)?;
    }
    let z: Vec<f32> = base_unit.iter().map(|&u| norm.apply(u)).collect();
    let to_unit =
        |z: &[f32]| -> Vec<f32> { z.iter().map(|&v| norm.invert(v as f64) as f32).collect() };
    for beta in BRIGHTNESS_RANGE {
        let mut x = z.clone();
        intensity::multiplicative_brightness(&mut x, beta);
        push("multiplicative_brightness", beta, &to_unit(&x))?;
    }
    for beta in CONTRAST_RANGE {
        let mut x = z.clone();
        intensity::contrast(&mut x, beta);
        push("contrast", beta, &to_unit(&x))?;
    }
    Ok(rows)
}
