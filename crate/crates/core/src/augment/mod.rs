//! Augmentation specs, policies and their execution.
//!
//! Every augmentation belongs to a [`Phase`]; a policy runs them in phase
//! order:
//!
//! 1. `preprocessing`: window shifting, which picks the window used to clip
//!    and rescale HU to `[0, 1]`,
//! 2. `pre_normalization`: additive brightness, gamma, inverse gamma on unit-scaled pixels,
//! 3. z-score normalization with the dataset foreground statistics,
//! 4. `post_normalization`: multiplicative brightness, contrast,
//! 5. `geometric`: flips and crop-and-resize on image and mask.
//!
//! Each spec is gated by its own Bernoulli draw. The number of random draws a
//! spec consumes does not depend on whether its gate fires.

pub mod geometric;
pub mod intensity;
mod policy;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::windowing::{ViewingWindow, WindowShiftPolicy};

pub use geometric::{CropBox, FlipAxis};
pub use policy::{apply_policy, execute, plan, AugmentedSlice, OpRecord, Plan};

/// Probability of every single intensity augmentation in the comparisons.
pub const INTENSITY_PROBABILITY: f64 = 0.3;
/// Probability of each op in the nnU-Net intensity composite.
pub const NNUNET_PROBABILITY: f64 = 0.15;
pub const CROP_RESIZE_PROBABILITY: f64 = 0.2;
pub const FLIP_PROBABILITY: f64 = 0.5;

// Strength ranges borrowed from the nnU-Net defaults.
pub const GAMMA_RANGE: [f64; 2] = [0.7, 1.5];
pub const CONTRAST_RANGE: [f64; 2] = [0.65, 1.5];
pub const BRIGHTNESS_RANGE: [f64; 2] = [0.7, 1.3];
pub const CROP_SCALE_RANGE: [f64; 2] = [0.8, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Preprocessing,
    PreNormalization,
    PostNormalization,
    Geometric,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AugmentationKind {
    WindowShift { level_low: f64, level_high: f64 },
    AdditiveBrightness { low: f64, high: f64 },
    MultiplicativeBrightness { low: f64, high: f64 },
    Contrast { low: f64, high: f64 },
    Gamma { low: f64, high: f64 },
    GammaInverse { low: f64, high: f64 },
    Flip { axes: Vec<FlipAxis> },
    CropResize { scale_low: f64, scale_high: f64 },
}

impl AugmentationKind {
    pub fn name(&self) -> &'static str {
        self.kind_name().as_str()
    }

    fn kind_name(&self) -> KindName {
        match self {
            AugmentationKind::WindowShift { .. } => KindName::WindowShift,
            AugmentationKind::AdditiveBrightness { .. } => KindName::AdditiveBrightness,
            AugmentationKind::MultiplicativeBrightness { .. } => KindName::MultiplicativeBrightness,
            AugmentationKind::Contrast { .. } => KindName::Contrast,
            AugmentationKind::Gamma { .. } => KindName::Gamma,
            AugmentationKind::GammaInverse { .. } => KindName::GammaInverse,
            AugmentationKind::Flip { .. } => KindName::Flip,
            AugmentationKind::CropResize { .. } => KindName::CropResize,
        }
    }

    pub fn phase(&self) -> Phase {
        self.kind_name().phase()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationSpec {
    pub kind: AugmentationKind,
    pub probability: f64,
}

impl AugmentationSpec {
    pub fn new(kind: AugmentationKind, probability: f64) -> Result<Self> {
        let s = Self { kind, probability };
        s.validate()?;
        Ok(s)
    }

    pub fn phase(&self) -> Phase {
        self.kind.phase()
    }

    fn validate(&self) -> Result<()> {
        let name = self.kind.name();
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::InvalidPolicy(format!(
                "{name}: probability {} outside [0, 1]",
                self.probability
            )));
        }
        let range = |low: f64, high: f64| {
            if low.is_finite() && high.is_finite() && low <= high {
                Ok(())
            } else {
                Err(Error::InvalidPolicy(format!(
                    "{name}: range [{low}, {high}] is empty"
                )))
            }
        };
        match &self.kind {
            AugmentationKind::WindowShift {
                level_low,
                level_high,
            } => range(*level_low, *level_high),
            AugmentationKind::AdditiveBrightness { low, high }
            | AugmentationKind::MultiplicativeBrightness { low, high }
            | AugmentationKind::Contrast { low, high } => range(*low, *high),
            AugmentationKind::Gamma { low, high }
            | AugmentationKind::GammaInverse { low, high } => {
                range(*low, *high)?;
                if *low <= 0.0 {
                    return Err(Error::InvalidPolicy(format!(
                        "{name}: gamma range must be positive"
                    )));
                }
                Ok(())
            }
            AugmentationKind::Flip { axes } => {
                if axes.is_empty() {
                    return Err(Error::InvalidPolicy("flip: no axes".into()));
                }
                Ok(())
            }
            AugmentationKind::CropResize {
                scale_low,
                scale_high,
            } => {
                range(*scale_low, *scale_high)?;
                if *scale_low <= 0.0 || *scale_high > 1.0 {
                    return Err(Error::InvalidPolicy(format!(
                        "crop_resize: scale range [{scale_low}, {scale_high}] must lie in (0, 1]"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// An ordered, validated list of augmentation specs.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AugmentationPolicy {
    specs: Vec<AugmentationSpec>,
}

impl AugmentationPolicy {
    pub fn new(specs: Vec<AugmentationSpec>) -> Result<Self> {
        for s in &specs {
            s.validate()?;
        }
        let shifts = specs
            .iter()
            .filter(|s| matches!(s.kind, AugmentationKind::WindowShift { .. }))
            .count();
        if shifts > 1 {
            return Err(Error::InvalidPolicy(format!(
                "{shifts} window_shift specs, at most one allowed"
            )));
        }
        check_phase_order(specs.iter().map(|s| (s.kind.name(), s.phase())))?;
        // gamma needs [0, 1] inputs; an unclipped additive shift before it breaks that
        let mut shifted = false;
        for s in &specs {
            match s.kind {
                AugmentationKind::AdditiveBrightness { .. } => shifted = true,
                AugmentationKind::Gamma { .. } | AugmentationKind::GammaInverse { .. }
                    if shifted =>
                {
                    return Err(Error::PhaseOrder(format!(
                        "{} after additive_brightness would see pixels outside [0, 1]",
                        s.kind.name()
                    )));
                }
                _ => {}
            }
        }
        Ok(Self { specs })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn specs(&self) -> &[AugmentationSpec] {
        &self.specs
    }

    pub fn window_shift(&self) -> Option<&AugmentationSpec> {
        self.specs
            .iter()
            .find(|s| matches!(s.kind, AugmentationKind::WindowShift { .. }))
    }

    /// Replaces the window-shift probability, if the policy shifts windows.
    pub fn with_shift_probability(mut self, p: f64) -> Result<Self> {
        for s in &mut self.specs {
            if matches!(s.kind, AugmentationKind::WindowShift { .. }) {
                s.probability = p;
                s.validate()?;
            }
        }
        Ok(self)
    }

    /// Appends the standard flip and crop-and-resize specs.
    pub fn with_geometric(mut self) -> Self {
        self.specs.extend(geometric_specs());
        self
    }

    pub fn to_file(&self) -> PolicyFile {
        PolicyFile {
            schema_version: crate::SCHEMA_VERSION,
            augmentations: self.specs.iter().map(PolicyEntry::from_spec).collect(),
        }
    }

    pub fn load(path: &Path, shift: &WindowShiftPolicy, base: &ViewingWindow) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: PolicyFile = serde_json::from_str(&text)?;
        file.resolve(shift, base)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(&self.to_file())?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn check_phase_order<'a>(items: impl Iterator<Item = (&'a str, Phase)>) -> Result<()> {
    let mut last: Option<(&str, Phase)> = None;
    for (name, phase) in items {
        if let Some((prev, prev_phase)) = last {
            if phase < prev_phase {
                return Err(Error::PhaseOrder(format!(
                    "{name} ({phase:?}) listed after {prev} ({prev_phase:?})"
                )));
            }
        }
        last = Some((name, phase));
    }
    Ok(())
}

/// Additive brightness range equivalent to shifting the window level over
/// `[level_low, level_high]`: moving the level by `d` HU moves unit-scaled
/// pixels by `-d / W`.
pub fn equivalent_alpha_range(shift: &WindowShiftPolicy, base: &ViewingWindow) -> (f64, f64) {
    let w = base.width();
    (
        (base.level() - shift.level_high) / w,
        (base.level() - shift.level_low) / w,
    )
}

fn geometric_specs() -> Vec<AugmentationSpec> {
    vec![
        AugmentationSpec {
            kind: AugmentationKind::CropResize {
                scale_low: CROP_SCALE_RANGE[0],
                scale_high: CROP_SCALE_RANGE[1],
            },
            probability: CROP_RESIZE_PROBABILITY,
        },
        AugmentationSpec {
            kind: AugmentationKind::Flip {
                axes: vec![FlipAxis::X, FlipAxis::Y],
            },
            probability: FLIP_PROBABILITY,
        },
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    WindowShift,
    AdditiveBrightness,
    MultiplicativeBrightness,
    Contrast,
    Gamma,
    GammaInverse,
    Flip,
    CropResize,
}

impl KindName {
    pub fn as_str(self) -> &'static str {
        match self {
            KindName::WindowShift => "window_shift",
            KindName::AdditiveBrightness => "additive_brightness",
            KindName::MultiplicativeBrightness => "multiplicative_brightness",
            KindName::Contrast => "contrast",
            KindName::Gamma => "gamma",
            KindName::GammaInverse => "gamma_inverse",
            KindName::Flip => "flip",
            KindName::CropResize => "crop_resize",
        }
    }

    pub fn phase(self) -> Phase {
        match self {
            KindName::WindowShift => Phase::Preprocessing,
            KindName::AdditiveBrightness | KindName::Gamma | KindName::GammaInverse => {
                Phase::PreNormalization
            }
            KindName::MultiplicativeBrightness | KindName::Contrast => Phase::PostNormalization,
            KindName::Flip | KindName::CropResize => Phase::Geometric,
        }
    }
}

/// Parameters of a `policy.json` entry; omitted for derived ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Params {
    Levels { level_low: f64, level_high: f64 },
    Scale { scale_low: f64, scale_high: f64 },
    Range { low: f64, high: f64 },
    Axes { axes: Vec<FlipAxis> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub kind: KindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Params>,
    pub probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
}

impl PolicyEntry {
    fn from_spec(s: &AugmentationSpec) -> Self {
        let params = match &s.kind {
            AugmentationKind::WindowShift {
                level_low,
                level_high,
            } => Params::Levels {
                level_low: *level_low,
                level_high: *level_high,
            },
            AugmentationKind::AdditiveBrightness { low, high }
            | AugmentationKind::MultiplicativeBrightness { low, high }
            | AugmentationKind::Contrast { low, high }
            | AugmentationKind::Gamma { low, high }
            | AugmentationKind::GammaInverse { low, high } => Params::Range {
                low: *low,
                high: *high,
            },
            AugmentationKind::Flip { axes } => Params::Axes { axes: axes.clone() },
            AugmentationKind::CropResize {
                scale_low,
                scale_high,
            } => Params::Scale {
                scale_low: *scale_low,
                scale_high: *scale_high,
            },
        };
        Self {
            kind: s.kind.kind_name(),
            params: Some(params),
            probability: s.probability,
            phase: Some(s.phase()),
        }
    }

    fn resolve(&self, shift: &WindowShiftPolicy, base: &ViewingWindow) -> Result<AugmentationSpec> {
        let name = self.kind.as_str();
        if let Some(phase) = self.phase {
            if phase != self.kind.phase() {
                return Err(Error::PhaseOrder(format!(
                    "{name} belongs to phase {:?}, policy says {phase:?}",
                    self.kind.phase()
                )));
            }
        }
        let mismatch =
            || Error::InvalidPolicy(format!("{name}: parameters {:?} do not fit", self.params));
        let range = |default: [f64; 2]| -> Result<(f64, f64)> {
            match &self.params {
                None => Ok((default[0], default[1])),
                Some(Params::Range { low, high }) => Ok((*low, *high)),
                Some(_) => Err(mismatch()),
            }
        };
        let kind = match self.kind {
            KindName::WindowShift => match &self.params {
                None => AugmentationKind::WindowShift {
                    level_low: shift.level_low,
                    level_high: shift.level_high,
                },
                Some(Params::Levels {
                    level_low,
                    level_high,
                }) => AugmentationKind::WindowShift {
                    level_low: *level_low,
                    level_high: *level_high,
                },
                Some(_) => return Err(mismatch()),
            },
            KindName::AdditiveBrightness => {
                let (a, b) = equivalent_alpha_range(shift, base);
                let (low, high) = range([a, b])?;
                AugmentationKind::AdditiveBrightness { low, high }
            }
            KindName::MultiplicativeBrightness => {
                let (low, high) = range(BRIGHTNESS_RANGE)?;
                AugmentationKind::MultiplicativeBrightness { low, high }
            }
            KindName::Contrast => {
                let (low, high) = range(CONTRAST_RANGE)?;
                AugmentationKind::Contrast { low, high }
            }
            KindName::Gamma => {
                let (low, high) = range(GAMMA_RANGE)?;
                AugmentationKind::Gamma { low, high }
            }
            KindName::GammaInverse => {
                let (low, high) = range(GAMMA_RANGE)?;
                AugmentationKind::GammaInverse { low, high }
            }
            KindName::Flip => match &self.params {
                None => AugmentationKind::Flip {
                    axes: vec![FlipAxis::X, FlipAxis::Y],
                },
                Some(Params::Axes { axes }) => AugmentationKind::Flip { axes: axes.clone() },
                Some(_) => return Err(mismatch()),
            },
            KindName::CropResize => match &self.params {
                None => AugmentationKind::CropResize {
                    scale_low: CROP_SCALE_RANGE[0],
                    scale_high: CROP_SCALE_RANGE[1],
                },
                Some(Params::Scale {
                    scale_low,
                    scale_high,
                }) => AugmentationKind::CropResize {
                    scale_low: *scale_low,
                    scale_high: *scale_high,
                },
                Some(_) => return Err(mismatch()),
            },
        };
        AugmentationSpec::new(kind, self.probability)
    }
}

/// On-disk policy (`policy.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub schema_version: u32,
    pub augmentations: Vec<PolicyEntry>,
}

impl PolicyFile {
    /// Fills derived and default ranges and validates the result.
    pub fn resolve(
        &self,
        shift: &WindowShiftPolicy,
        base: &ViewingWindow,
    ) -> Result<AugmentationPolicy> {
        if self.schema_version != crate::SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                expected: crate::SCHEMA_VERSION,
            });
        }
        let specs = self
            .augmentations
            .iter()
            .map(|e| e.resolve(shift, base))
            .collect::<Result<Vec<_>>>()?;
        AugmentationPolicy::new(specs)
    }
}

pub const PRESETS: &[&str] = &[
    "none",
    "window_shift",
    "additive_brightness",
    "multiplicative_brightness",
    "contrast",
    "gamma",
    "gamma_inverse",
    "nnunet",
];

/// Named intensity policy, without geometric augmentations.
pub fn preset(
    name: &str,
    shift: &WindowShiftPolicy,
    base: &ViewingWindow,
) -> Result<AugmentationPolicy> {
    let entry = |kind: KindName, probability: f64| PolicyEntry {
        kind,
        params: None,
        probability,
        phase: None,
    };
    let entries = match name {
        "none" => vec![],
        "window_shift" => vec![entry(KindName::WindowShift, shift.probability)],
        "additive_brightness" => vec![entry(KindName::AdditiveBrightness, INTENSITY_PROBABILITY)],
        "multiplicative_brightness" => vec![entry(
            KindName::MultiplicativeBrightness,
            INTENSITY_PROBABILITY,
        )],
        "contrast" => vec![entry(KindName::Contrast, INTENSITY_PROBABILITY)],
        "gamma" => vec![entry(KindName::Gamma, INTENSITY_PROBABILITY)],
        "gamma_inverse" => vec![entry(KindName::GammaInverse, INTENSITY_PROBABILITY)],
        "nnunet" => vec![
            entry(KindName::Gamma, NNUNET_PROBABILITY),
            entry(KindName::GammaInverse, NNUNET_PROBABILITY),
            entry(KindName::MultiplicativeBrightness, NNUNET_PROBABILITY),
            entry(KindName::Contrast, NNUNET_PROBABILITY),
        ],
        other => {
            return Err(Error::Config(format!(
                "unknown policy preset `{other}` (known: {})",
                PRESETS.join(", ")
            )))
        }
    };
    PolicyFile {
        schema_version: crate::SCHEMA_VERSION,
        augmentations: entries,
    }
    .resolve(shift, base)
}
