//! Drawing a policy's random parameters and applying them to a slice.
//!
//! Planning and execution are separate so an audit record can be replayed
//! without touching the random stream.

use serde::{Deserialize, Serialize};

use super::geometric::{self, CropBox, FlipAxis};
use super::intensity;
use super::{check_phase_order, AugmentationKind, AugmentationPolicy, KindName, Phase};
use crate::error::Result;
use crate::rng::RngStream;
use crate::volume_io::Plane;
use crate::windowing::{draw_window, window_unit, Normalization, ViewingWindow, WindowShiftPolicy};

/// One drawn augmentation. Parameters are recorded even when the gate did
/// not fire.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OpRecord {
    AdditiveBrightness { applied: bool, alpha: f64 },
    MultiplicativeBrightness { applied: bool, beta: f64 },
    Contrast { applied: bool, beta: f64 },
    Gamma { applied: bool, gamma: f64 },
    GammaInverse { applied: bool, gamma: f64 },
    Flip { applied: bool, axis: FlipAxis },
    CropResize { applied: bool, crop: CropBox },
}

impl OpRecord {
    pub fn kind(&self) -> KindName {
        match self {
            OpRecord::AdditiveBrightness { .. } => KindName::AdditiveBrightness,
            OpRecord::MultiplicativeBrightness { .. } => KindName::MultiplicativeBrightness,
            OpRecord::Contrast { .. } => KindName::Contrast,
            OpRecord::Gamma { .. } => KindName::Gamma,
            OpRecord::GammaInverse { .. } => KindName::GammaInverse,
            OpRecord::Flip { .. } => KindName::Flip,
            OpRecord::CropResize { .. } => KindName::CropResize,
        }
    }

    pub fn applied(&self) -> bool {
        match *self {
            OpRecord::AdditiveBrightness { applied, .. }
            | OpRecord::MultiplicativeBrightness { applied, .. }
            | OpRecord::Contrast { applied, .. }
            | OpRecord::Gamma { applied, .. }
            | OpRecord::GammaInverse { applied, .. }
            | OpRecord::Flip { applied, .. }
            | OpRecord::CropResize { applied, .. } => applied,
        }
    }
}

/// Everything drawn for one slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub window: ViewingWindow,
    pub window_shifted: bool,
    pub ops: Vec<OpRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSlice {
    pub image: Plane<f32>,
    pub mask: Plane<u8>,
    pub plan: Plan,
}

/// Draws all parameters of `policy` for a `width` x `height` slice.
///
/// Draw counts are fixed per spec: two for the window shift and for each
/// intensity op (gate, parameter), one per flip axis, four for crop-and-resize
/// (gate, scale, two offsets).
pub fn plan(
    policy: &AugmentationPolicy,
    base: &ViewingWindow,
    width: usize,
    height: usize,
    rng: &mut RngStream,
) -> Result<Plan> {
    let mut window = *base;
    let mut window_shifted = false;
    let mut ops = Vec::new();
    for spec in policy.specs() {
        let p = spec.probability;
        let gated = |rng: &mut RngStream, low: f64, high: f64| {
            let gate = rng.next_f64();
            (gate < p, rng.uniform(low, high))
        };
        match spec.kind {
            AugmentationKind::WindowShift {
                level_low,
                level_high,
            } => {
                let shift = WindowShiftPolicy {
                    level_low,
                    level_high,
                    probability: p,
                };
                (window, window_shifted) = draw_window(&shift, base, rng)?;
            }
            AugmentationKind::AdditiveBrightness { low, high } => {
                let (applied, alpha) = gated(rng, low, high);
                ops.push(OpRecord::AdditiveBrightness { applied, alpha });
            }
            AugmentationKind::MultiplicativeBrightness { low, high } => {
                let (applied, beta) = gated(rng, low, high);
                ops.push(OpRecord::MultiplicativeBrightness { applied, beta });
            }
            AugmentationKind::Contrast { low, high } => {
                let (applied, beta) = gated(rng, low, high);
                ops.push(OpRecord::Contrast { applied, beta });
            }
            AugmentationKind::Gamma { low, high } => {
                let (applied, gamma) = gated(rng, low, high);
                ops.push(OpRecord::Gamma { applied, gamma });
            }
            AugmentationKind::GammaInverse { low, high } => {
                let (applied, gamma) = gated(rng, low, high);
                ops.push(OpRecord::GammaInverse { applied, gamma });
            }
            AugmentationKind::Flip { ref axes } => {
                for &axis in axes {
                    let applied = rng.next_f64() < p;
                    ops.push(OpRecord::Flip { applied, axis });
                }
            }
            AugmentationKind::CropResize {
                scale_low,
                scale_high,
            } => {
                let (applied, scale) = gated(rng, scale_low, scale_high);
                let ux = rng.next_f64();
                let uy = rng.next_f64();
                let crop = CropBox::from_draws(width, height, scale, ux, uy)?;
                ops.push(OpRecord::CropResize { applied, crop });
            }
        }
    }
    Ok(Plan {
        window,
        window_shifted,
        ops,
    })
}

/// Windows `hu`, runs the pre-normalization ops, z-scores with `norm`, then
/// runs the post-normalization and geometric ops.
pub fn execute(
    hu: &Plane<f32>,
    mask: &Plane<u8>,
    window: &ViewingWindow,
    ops: &[OpRecord],
    norm: &Normalization,
) -> Result<(Plane<f32>, Plane<u8>)> {
    check_phase_order(ops.iter().map(|op| (op.kind().as_str(), op.kind().phase())))?;
    let mut pixels = window_unit(hu.as_slice(), window);
    let mut normalized = false;
    let mut image: Option<Plane<f32>> = None;
    let mut labels = mask.clone();
    for op in ops {
        if !normalized && op.kind().phase() >= Phase::PostNormalization {
            normalize(&mut pixels, norm);
            normalized = true;
        }
        if !op.applied() {
            continue;
        }
        match *op {
            OpRecord::AdditiveBrightness { alpha, .. } => {
                intensity::additive_brightness(&mut pixels, alpha)
            }
            OpRecord::Gamma { gamma, .. } => intensity::gamma(&mut pixels, gamma)?,
            OpRecord::GammaInverse { gamma, .. } => intensity::gamma_inverse(&mut pixels, gamma)?,
            OpRecord::MultiplicativeBrightness { beta, .. } => {
                intensity::multiplicative_brightness(&mut pixels, beta)
            }
            OpRecord::Contrast { beta, .. } => intensity::contrast(&mut pixels, beta),
            OpRecord::Flip { axis, .. } => {
                let img = take_image(&mut image, &mut pixels, hu)?;
                let (img, lab) = geometric::flip(&img, &labels, axis)?;
                image = Some(img);
                labels = lab;
            }
            OpRecord::CropResize { crop, .. } => {
                let img = take_image(&mut image, &mut pixels, hu)?;
                let (img, lab) = geometric::crop_resize(&img, &labels, crop)?;
                image = Some(img);
                labels = lab;
            }
        }
    }
    if !normalized {
        normalize(&mut pixels, norm);
    }
    let image = match image {
        Some(img) => img,
        None => Plane::new(hu.width(), hu.height(), pixels)?,
    };
    Ok((image, labels))
}

fn normalize(pixels: &mut [f32], norm: &Normalization) {
    for v in pixels.iter_mut() {
        *v = norm.apply(*v);
    }
}

fn take_image(
    image: &mut Option<Plane<f32>>,
    pixels: &mut Vec<f32>,
    like: &Plane<f32>,
) -> Result<Plane<f32>> {
    match image.take() {
        Some(img) => Ok(img),
        None => Plane::new(like.width(), like.height(), std::mem::take(pixels)),
    }
}

/// Plans and executes `policy` on one slice.
pub fn apply_policy(
    hu: &Plane<f32>,
    mask: &Plane<u8>,
    policy: &AugmentationPolicy,
    base: &ViewingWindow,
    norm: &Normalization,
    rng: &mut RngStream,
) -> Result<AugmentedSlice> {
    let plan = plan(policy, base, hu.width(), hu.height(), rng)?;
    let (image, mask) = execute(hu, mask, &plan.window, &plan.ops, norm)?;
    Ok(AugmentedSlice { image, mask, plan })
}
