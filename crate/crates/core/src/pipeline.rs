//! The dataset statistics document and the per-slice augmentation driver.
//!
//! `stats.json` carries everything a training loop needs besides the policy:
//! the accumulated foreground statistics, the base window, the window-shift
//! range and the z-score parameters. A [`SlicePipeline`] wraps it together
//! with a policy and a seed; every call derives its own random stream from
//! `(seed, source_id, slice_index, epoch)`, so slices can be augmented in any
//! order, on any thread, and replayed later from their audit records.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{self, execute, AugmentationPolicy, OpRecord};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::stats::{ForegroundStats, LOWER_QUANTILE, UPPER_QUANTILE};
use crate::volume_io::Plane;
use crate::windowing::{preprocess_inference, Normalization, ViewingWindow, WindowShiftPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub lower: f64,
    pub upper: f64,
}

/// Contents of `stats.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsDocument {
    pub schema_version: u32,
    pub percentiles: Percentiles,
    pub base_window: ViewingWindow,
    pub shift_policy: WindowShiftPolicy,
    pub shift_classes: BTreeSet<u8>,
    pub normalization: Normalization,
    pub stats: ForegroundStats,
    #[serde(default)]
    pub config: serde_json::Value,
}

/// Optional replacements for derived quantities.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Overrides {
    pub base_window: Option<ViewingWindow>,
    pub level_bounds: Option<(f64, f64)>,
}

impl StatsDocument {
    pub fn derive(
        stats: ForegroundStats,
        shift_classes: BTreeSet<u8>,
        probability: f64,
        overrides: Overrides,
        config: serde_json::Value,
    ) -> Result<Self> {
        let base_window = match overrides.base_window {
            Some(w) => w,
            None => stats.derive_base_window()?,
        };
        let shift_policy = match overrides.level_bounds {
            Some((low, high)) => WindowShiftPolicy::new(low, high, probability)?,
            None => stats.derive_shift_bounds(&shift_classes, probability)?,
        };
        let normalization = stats.normalization_params(&base_window)?;
        Ok(Self {
            schema_version: crate::SCHEMA_VERSION,
            percentiles: Percentiles {
                lower: LOWER_QUANTILE,
                upper: UPPER_QUANTILE,
            },
            base_window,
            shift_policy,
            shift_classes,
            normalization,
            stats,
            config,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_slice(&bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_slice(bytes)?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| {
                Error::Data("stats document: missing or invalid field `schema_version`".into())
            })?;
        if found != crate::SCHEMA_VERSION as u64 {
            return Err(Error::SchemaVersion {
                found: found as u32,
                expected: crate::SCHEMA_VERSION,
            });
        }
        let doc: Self = serde_json::from_value(value)?;
        doc.shift_policy.validate()?;
        Ok(doc)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// A named preset, or a `policy.json` file when `spec` is an existing path.
    pub fn policy(&self, spec: &str) -> Result<AugmentationPolicy> {
        let path = Path::new(spec);
        if path.is_file() {
            AugmentationPolicy::load(path, &self.shift_policy, &self.base_window)
        } else {
            augment::preset(spec, &self.shift_policy, &self.base_window)
        }
    }
}

/// Everything needed to reproduce one augmented slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub source_id: String,
    pub slice_index: usize,
    pub epoch: u64,
    pub window: ViewingWindow,
    pub window_shifted: bool,
    pub ops: Vec<OpRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentOutput {
    pub image: Plane<f32>,
    pub mask: Plane<u8>,
    pub audit: AuditRecord,
}

/// Immutable handle over (base window, normalization, policy, seed).
#[derive(Clone, Debug)]
pub struct SlicePipeline {
    base: ViewingWindow,
    norm: Normalization,
    policy: AugmentationPolicy,
    seed: u64,
}

impl SlicePipeline {
    pub fn new(
        base: ViewingWindow,
        norm: Normalization,
        policy: AugmentationPolicy,
        seed: u64,
    ) -> Self {
        Self {
            base,
            norm,
            policy,
            seed,
        }
    }

    pub fn from_document(doc: &StatsDocument, policy: AugmentationPolicy, seed: u64) -> Self {
        Self::new(doc.base_window, doc.normalization, policy, seed)
    }

    /// Opens `stats.json` and a policy (file path or preset name).
    pub fn open(stats_path: &Path, policy: &str, seed: u64) -> Result<Self> {
        let doc = StatsDocument::load(stats_path)?;
        let policy = doc.policy(policy)?;
        Ok(Self::from_document(&doc, policy, seed))
    }

    pub fn base_window(&self) -> &ViewingWindow {
        &self.base
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    pub fn policy(&self) -> &AugmentationPolicy {
        &self.policy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn augment(
        &self,
        hu: &Plane<f32>,
        mask: &Plane<u8>,
        source_id: &str,
        slice_index: usize,
        epoch: u64,
    ) -> Result<AugmentOutput> {
        let mut rng = RngStream::for_slice(self.seed, source_id, slice_index, epoch);
        let out = augment::apply_policy(hu, mask, &self.policy, &self.base, &self.norm, &mut rng)?;
        Ok(AugmentOutput {
            image: out.image,
            mask: out.mask,
            audit: AuditRecord {
                source_id: source_id.to_string(),
                slice_index,
                epoch,
                window: out.plan.window,
                window_shifted: out.plan.window_shifted,
                ops: out.plan.ops,
            },
        })
    }

    /// Inference preprocessing with the base window.
    pub fn preprocess(&self, hu: &Plane<f32>) -> Plane<f32> {
        let pixels = preprocess_inference(hu.as_slice(), &self.base, &self.norm);
        Plane::new(hu.width(), hu.height(), pixels).expect("same shape")
    }

    /// Re-applies a recorded window and ops without drawing random numbers.
    pub fn replay(
        &self,
        hu: &Plane<f32>,
        mask: &Plane<u8>,
        audit: &AuditRecord,
    ) -> Result<(Plane<f32>, Plane<u8>)> {
        execute(hu, mask, &audit.window, &audit.ops, &self.norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume_io::{HuVolume, SegmentationMask};

    fn doc() -> StatsDocument {
        let dims = [4, 4, 2];
        let n = 32;
        let mut stats = ForegroundStats::new(crate::stats::default_foreground());
        for (k, shift) in [0.0f32, 30.0, 60.0].into_iter().enumerate() {
            let vox: Vec<f32> = (0..n)
                .map(|i| 40.0 + shift + (i % 9) as f32 * 10.0)
                .collect();
            let labels: Vec<u8> = (0..n).map(|i| if i % 5 == 0 { 2 } else { 1 }).collect();
            let vol = HuVolume::new(dims, [1.0; 3], vox, format!("v{k}")).unwrap();
            let mask = SegmentationMask::new(dims, labels).unwrap();
            stats.accumulate(&vol, &mask).unwrap();
        }
        StatsDocument::derive(
            stats,
            crate::stats::default_foreground(),
            0.3,
            Overrides::default(),
            serde_json::json!({"seed": 1}),
        )
        .unwrap()
    }

    #[test]
    fn document_round_trips_bit_exactly() {
        let d = doc();
        let bytes = d.to_json().unwrap();
        let back = StatsDocument::from_slice(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_json().unwrap(), bytes);
    }

    #[test]
    fn corrupted_document_names_the_field() {
        let d = doc();
        let mut v: serde_json::Value = serde_json::from_slice(&d.to_json().unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("base_window");
        let err = StatsDocument::from_slice(&serde_json::to_vec(&v).unwrap()).unwrap_err();
        assert!(err.to_string().contains("base_window"), "{err}");
        v["schema_version"] = serde_json::json!(7);
        assert!(matches!(
            StatsDocument::from_slice(&serde_json::to_vec(&v).unwrap()),
            Err(Error::SchemaVersion { found: 7, .. })
        ));
    }

    #[test]
    fn same_slice_key_same_output() {
        let d = doc();
        let p = SlicePipeline::from_document(&d, d.policy("nnunet").unwrap().with_geometric(), 9);
        let img = Plane::new(4, 4, (0..16).map(|i| i as f32 * 20.0).collect()).unwrap();
        let mask = Plane::filled(4, 4, 1u8).unwrap();
        let a = p.augment(&img, &mask, "v0", 3, 1).unwrap();
        let b = p.augment(&img, &mask, "v0", 3, 1).unwrap();
        assert_eq!(a, b);
        let (r, m) = p.replay(&img, &mask, &a.audit).unwrap();
        assert_eq!((r, m), (a.image, a.mask));
    }

    #[test]
    fn none_policy_equals_preprocess() {
        let d = doc();
        let p = SlicePipeline::from_document(&d, d.policy("none").unwrap(), 0);
        let img = Plane::new(4, 4, (0..16).map(|i| i as f32 * 25.0 - 100.0).collect()).unwrap();
        let mask = Plane::filled(4, 4, 0u8).unwrap();
        assert_eq!(
            p.augment(&img, &mask, "x", 0, 0).unwrap().image,
            p.preprocess(&img)
        );
    }
}
