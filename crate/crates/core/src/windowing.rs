//! Viewing windows: clipping, unit rescaling, z-scoring and level shifting.
//!
//! All per-pixel kernels store `f32` and compute in `f64`. The fused
//! inference kernel performs exactly the same roundings as the staged
//! functions, so both routes agree bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Clipping range `[level - width/2, level + width/2]` in HU.
///
/// Bounds are stored alongside level and width so that a window built from
/// two percentiles reports those percentiles back exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WindowRepr", into = "WindowRepr")]
pub struct ViewingWindow {
    level: f64,
    width: f64,
    lower: f64,
    upper: f64,
    clip_lower: f32,
    clip_upper: f32,
}

#[derive(Serialize, Deserialize)]
struct WindowRepr {
    level: f64,
    width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    upper: Option<f64>,
}

impl From<ViewingWindow> for WindowRepr {
    fn from(w: ViewingWindow) -> Self {
        WindowRepr {
            level: w.level,
            width: w.width,
            lower: Some(w.lower),
            upper: Some(w.upper),
        }
    }
}

impl TryFrom<WindowRepr> for ViewingWindow {
    type Error = Error;

    fn try_from(r: WindowRepr) -> Result<Self> {
        let w = ViewingWindow::from_level_width(r.level, r.width)?;
        match (r.lower, r.upper) {
            (None, None) => Ok(w),
            (Some(lo), Some(hi)) => {
                let tol = 1e-9 * (1.0 + r.level.abs() + r.width.abs());
                if (lo - w.lower).abs() > tol || (hi - w.upper).abs() > tol {
                    return Err(Error::InvalidWindow(format!(
                        "bounds [{lo}, {hi}] disagree with level {} width {}",
                        r.level, r.width
                    )));
                }
                ViewingWindow::build(r.level, r.width, lo, hi)
            }
            _ => Err(Error::InvalidWindow(
                "lower and upper must be given together".into(),
            )),
        }
    }
}

fn round_up_f32(v: f64) -> f32 {
    let f = v as f32;
    if (f as f64) < v {
        f.next_up()
    } else {
        f
    }
}

fn round_down_f32(v: f64) -> f32 {
    let f = v as f32;
    if (f as f64) > v {
        f.next_down()
    } else {
        f
    }
}

impl ViewingWindow {
    fn build(level: f64, width: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(level.is_finite() && width.is_finite() && width > 0.0) {
            return Err(Error::InvalidWindow(format!(
                "level {level}, width {width}"
            )));
        }
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(Error::InvalidWindow(format!(
                "lower {lower} >= upper {upper}"
            )));
        }
        let clip_lower = round_up_f32(lower);
        let clip_upper = round_down_f32(upper);
        if clip_lower > clip_upper {
            return Err(Error::InvalidWindow(format!(
                "width {width} too narrow for single-precision clipping"
            )));
        }
        Ok(Self {
            level,
            width,
            lower,
            upper,
            clip_lower,
            clip_upper,
        })
    }

    pub fn from_level_width(level: f64, width: f64) -> Result<Self> {
        Self::build(level, width, level - width / 2.0, level + width / 2.0)
    }

    pub fn from_bounds(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) || upper <= lower {
            return Err(Error::DegenerateWindow { lower, upper });
        }
        Self::build((lower + upper) / 2.0, upper - lower, lower, upper)
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// Same width, new level.
    pub fn with_level(&self, level: f64) -> Result<Self> {
        if level == self.level {
            return Ok(*self);
        }
        Self::from_level_width(level, self.width)
    }

    #[inline]
    fn clip(&self, x: f32) -> f32 {
        x.clamp(self.clip_lower, self.clip_upper)
    }

    #[inline]
    fn unit(&self, clipped: f32) -> f32 {
        ((clipped as f64 - self.lower) / self.width).clamp(0.0, 1.0) as f32
    }
}

/// Range and probability for window-level sampling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowShiftPolicy {
    pub level_low: f64,
    pub level_high: f64,
    pub probability: f64,
}

impl WindowShiftPolicy {
    pub fn new(level_low: f64, level_high: f64, probability: f64) -> Result<Self> {
        let p = Self {
            level_low,
            level_high,
            probability,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level_low.is_finite() && self.level_high.is_finite())
            || self.level_low > self.level_high
        {
            return Err(Error::InvalidPolicy(format!(
                "level range [{}, {}] is not ordered",
                self.level_low, self.level_high
            )));
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::InvalidPolicy(format!(
                "probability {} outside [0, 1]",
                self.probability
            )));
        }
        Ok(())
    }
}

/// Foreground mean and standard deviation on the unit scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NormRepr")]
pub struct Normalization {
    mean: f64,
    std: f64,
}

#[derive(Deserialize)]
struct NormRepr {
    mean: f64,
    std: f64,
}

impl TryFrom<NormRepr> for Normalization {
    type Error = Error;

    fn try_from(r: NormRepr) -> Result<Self> {
        Normalization::new(r.mean, r.std)
    }
}

impl Normalization {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::Config(format!(
                "normalization mean {mean} is not finite"
            )));
        }
        if !(std.is_finite() && std > 0.0) {
            return Err(Error::ZeroStd);
        }
        Ok(Self { mean, std })
    }

    /// Leaves values unchanged.
    pub fn identity() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    #[inline]
    pub fn apply(&self, u: f32) -> f32 {
        ((u as f64 - self.mean) / self.std) as f32
    }

    /// Maps a z-score back to the unit scale.
    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Hu,
    ClippedHu,
    UnitScaled,
    ZScored,
}

/// Pixels tagged with the stage they are in and the window that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessedSlice {
    pub pixels: Vec<f32>,
    pub stage: Stage,
    pub window_used: ViewingWindow,
}

impl PreprocessedSlice {
    /// Checks the value-range invariant of the slice's stage.
    pub fn check(&self) -> Result<()> {
        let (lo, hi, expected, stage) = match self.stage {
            Stage::ClippedHu => (
                self.window_used.lower(),
                self.window_used.upper(),
                "values inside the window",
                "clipped-HU",
            ),
            Stage::UnitScaled => (0.0, 1.0, "values in [0, 1]", "unit-scaled"),
            Stage::Hu | Stage::ZScored => return Ok(()),
        };
        match self
            .pixels
            .iter()
            .find(|&&v| !((v as f64) >= lo && (v as f64) <= hi))
        {
            Some(&v) => Err(Error::StageContract {
                stage,
                expected,
                value: v as f64,
            }),
            None => Ok(()),
        }
    }
}

/// Clamps every pixel into the window.
pub fn apply_window(pixels: &[f32], window: &ViewingWindow) -> Vec<f32> {
    pixels.iter().map(|&x| window.clip(x)).collect()
}

/// Maps clipped HU to `[0, 1]`: window lower bound to 0, upper bound to 1.
pub fn rescale_unit(clipped: &[f32], window: &ViewingWindow) -> Result<Vec<f32>> {
    if cfg!(debug_assertions) {
        if let Some(&v) = clipped
            .iter()
            .find(|&&v| !(v >= window.clip_lower && v <= window.clip_upper))
        {
            return Err(Error::StageContract {
                stage: "rescale_unit",
                expected: "pixels clipped to the window",
                value: v as f64,
            });
        }
    }
    Ok(clipped.iter().map(|&c| window.unit(c)).collect())
}

pub fn z_normalize(unit: &[f32], norm: &Normalization) -> Vec<f32> {
    unit.iter().map(|&u| norm.apply(u)).collect()
}

/// Clip, rescale and z-score in a single pass.
pub fn preprocess_fused(pixels: &[f32], window: &ViewingWindow, norm: &Normalization) -> Vec<f32> {
    pixels
        .iter()
        .map(|&x| norm.apply(window.unit(window.clip(x))))
        .collect()
}

/// Inference-time preprocessing with the base window.
pub fn preprocess_inference(
    pixels: &[f32],
    base: &ViewingWindow,
    norm: &Normalization,
) -> Vec<f32> {
    preprocess_fused(pixels, base, norm)
}

/// Clip and rescale to `[0, 1]` in a single pass.
pub fn window_unit(pixels: &[f32], window: &ViewingWindow) -> Vec<f32> {
    pixels
        .iter()
        .map(|&x| window.unit(window.clip(x)))
        .collect()
}

/// Draws the gate and the level (always two draws) and reports whether the
/// window was shifted.
pub fn draw_window(
    policy: &WindowShiftPolicy,
    base: &ViewingWindow,
    rng: &mut RngStream,
) -> Result<(ViewingWindow, bool)> {
    let gate = rng.next_f64();
    let level = rng.uniform(policy.level_low, policy.level_high);
    if gate < policy.probability {
        Ok((base.with_level(level)?, true))
    } else {
        Ok((*base, false))
    }
}

/// With probability `p`, the base window moved to a level drawn uniformly
/// from `[level_low, level_high]`; otherwise the base window.
pub fn sample_window_level(
    policy: &WindowShiftPolicy,
    base: &ViewingWindow,
    rng: &mut RngStream,
) -> Result<ViewingWindow> {
    draw_window(policy, base, rng).map(|(w, _)| w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(level: f64, width: f64) -> ViewingWindow {
        ViewingWindow::from_level_width(level, width).unwrap()
    }

    #[test]
    fn clamps_to_window_bounds() {
        let win = w(50.0, 400.0);
        assert_eq!(
            apply_window(&[500.0, -400.0, 12.5], &win),
            vec![250.0, -150.0, 12.5]
        );
    }

    #[test]
    fn rescale_endpoints_and_midpoint() {
        let win = w(50.0, 400.0);
        assert_eq!(
            rescale_unit(&[-150.0, 250.0, 50.0], &win).unwrap(),
            vec![0.0, 1.0, 0.5]
        );
        assert_eq!(rescale_unit(&[50.0; 4], &win).unwrap(), vec![0.5; 4]);
    }

    #[test]
    #[cfg(debug_assertions)]
    fn rescale_rejects_unclipped_input_in_debug() {
        assert!(matches!(
            rescale_unit(&[300.0], &w(50.0, 400.0)),
            Err(Error::StageContract { .. })
        ));
    }

    #[test]
    fn z_normalize_examples() {
        let n = Normalization::new(0.5, 0.25).unwrap();
        assert_eq!(z_normalize(&[0.5, 1.0], &n), vec![0.0, 2.0]);
        let xs = [0.1f32, 0.7, 0.33];
        assert_eq!(
            z_normalize(&xs, &Normalization::new(0.0, 1.0).unwrap()),
            xs.to_vec()
        );
        assert!(matches!(Normalization::new(0.5, 0.0), Err(Error::ZeroStd)));
        assert!(matches!(Normalization::new(0.5, -1.0), Err(Error::ZeroStd)));
    }

    #[test]
    fn all_air_slice_is_constant() {
        let win = w(60.0, 360.0);
        let n = Normalization::new(0.4, 0.2).unwrap();
        let out = preprocess_inference(&[-1000.0; 16], &win, &n);
        let z0 = ((0.0 - 0.4) / 0.2) as f32;
        assert!(out.iter().all(|&v| v == z0));
    }

    #[test]
    fn window_invariants() {
        assert!(ViewingWindow::from_level_width(0.0, 0.0).is_err());
        assert!(ViewingWindow::from_level_width(0.0, -5.0).is_err());
        assert!(ViewingWindow::from_level_width(f64::NAN, 5.0).is_err());
        assert!(matches!(
            ViewingWindow::from_bounds(40.0, 40.0),
            Err(Error::DegenerateWindow { .. })
        ));
        let b = ViewingWindow::from_bounds(-37.3, 211.9).unwrap();
        assert_eq!(b.lower(), -37.3);
        assert_eq!(b.upper(), 211.9);
    }

    #[test]
    fn clip_bounds_round_inward() {
        let win = ViewingWindow::from_bounds(0.1, 0.30000000000000004).unwrap();
        let out = apply_window(&[-1.0, 1.0], &win);
        assert!(out[0] as f64 >= win.lower());
        assert!(out[1] as f64 <= win.upper());
    }

    #[test]
    fn window_json_round_trips_exactly() {
        let win = ViewingWindow::from_bounds(-41.25, 233.7).unwrap();
        let text = serde_json::to_string(&win).unwrap();
        let back: ViewingWindow = serde_json::from_str(&text).unwrap();
        assert_eq!(back, win);
        let plain: ViewingWindow = serde_json::from_str(r#"{"level": 50, "width": 400}"#).unwrap();
        assert_eq!(plain, w(50.0, 400.0));
        assert!(serde_json::from_str::<ViewingWindow>(r#"{"level": 50, "width": 0}"#).is_err());
        assert!(serde_json::from_str::<ViewingWindow>(
            r#"{"level": 50, "width": 10, "lower": 0, "upper": 99}"#
        )
        .is_err());
    }

    #[test]
    fn gate_never_fires_at_zero_and_always_at_one() {
        let base = w(80.0, 300.0);
        let mut rng = RngStream::new(3);
        let never = WindowShiftPolicy::new(0.0, 200.0, 0.0).unwrap();
        for _ in 0..1000 {
            assert_eq!(sample_window_level(&never, &base, &mut rng).unwrap(), base);
        }
        assert_eq!(rng.draws(), 2000);
        let fixed = WindowShiftPolicy::new(120.0, 120.0, 1.0).unwrap();
        for _ in 0..100 {
            let s = sample_window_level(&fixed, &base, &mut rng).unwrap();
            assert_eq!((s.level(), s.width()), (120.0, 300.0));
        }
    }

    #[test]
    fn shifted_levels_stay_in_range() {
        let base = w(80.0, 300.0);
        let pol = WindowShiftPolicy::new(40.0, 190.0, 1.0).unwrap();
        let mut rng = RngStream::new(11);
        for _ in 0..10_000 {
            let s = sample_window_level(&pol, &base, &mut rng).unwrap();
            assert!(s.level() >= 40.0 && s.level() < 190.0);
            assert_eq!(s.width(), 300.0);
        }
    }

    #[test]
    fn policy_validation() {
        assert!(WindowShiftPolicy::new(10.0, 5.0, 0.3).is_err());
        assert!(WindowShiftPolicy::new(0.0, 5.0, 1.5).is_err());
        assert!(WindowShiftPolicy::new(5.0, 5.0, 0.0).is_ok());
    }

    #[test]
    fn stage_checks() {
        let win = w(0.0, 10.0);
        let ok = PreprocessedSlice {
            pixels: vec![0.0, 1.0],
            stage: Stage::UnitScaled,
            window_used: win,
        };
        assert!(ok.check().is_ok());
        let bad = PreprocessedSlice {
            pixels: vec![6.0],
            stage: Stage::ClippedHu,
            window_used: win,
        };
        assert!(matches!(bad.check(), Err(Error::StageContract { .. })));
    }
}
