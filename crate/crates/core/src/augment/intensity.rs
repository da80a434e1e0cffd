//! Intensity augmentations, applied in place.
//!
//! `additive_brightness`, `gamma` and `gamma_inverse` work on unit-scaled
//! pixels before z-scoring; `multiplicative_brightness` and `contrast` work
//! on z-scored pixels.

use crate::error::{Error, Result};

/// `x + alpha`, without re-clipping.
pub fn additive_brightness(x: &mut [f32], alpha: f64) {
    for v in x {
        *v = (*v as f64 + alpha) as f32;
    }
}

/// `x * beta`.
pub fn multiplicative_brightness(x: &mut [f32], beta: f64) {
    for v in x {
        *v = (*v as f64 * beta) as f32;
    }
}

/// `x * beta`, clipped back to the input's own range.
pub fn contrast(x: &mut [f32], beta: f64) {
    let Some((lo, hi)) = extrema(x) else { return };
    for v in x {
        *v = ((*v as f64 * beta).clamp(lo as f64, hi as f64)) as f32;
    }
}

fn extrema(x: &[f32]) -> Option<(f32, f32)> {
    let first = *x.first()?;
    Some(
        x.iter()
            .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))),
    )
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidPolicy(format!(
            "gamma {gamma} must be positive"
        )))
    }
}

fn check_unit(x: &[f32], stage: &'static str) -> Result<()> {
    match x.iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
        Some(&v) => Err(Error::StageContract {
            stage,
            expected: "unit-scaled pixels in [0, 1]",
            value: v as f64,
        }),
        None => Ok(()),
    }
}

/// `x^gamma` for one unit-scaled value.
#[inline]
pub fn gamma_value(x: f64, gamma: f64) -> f64 {
    x.powf(gamma)
}

/// `1 - (1 - x)^gamma` for one unit-scaled value.
#[inline]
pub fn gamma_inverse_value(x: f64, gamma: f64) -> f64 {
    1.0 - gamma_value(1.0 - x, gamma)
}

/// `x^gamma` on unit-scaled pixels.
pub fn gamma(x: &mut [f32], gamma: f64) -> Result<()> {
    check_gamma(gamma)?;
    check_unit(x, "gamma")?;
    for v in x {
        *v = gamma_value(*v as f64, gamma) as f32;
    }
    Ok(())
}

/// `1 - (1 - x)^gamma` on unit-scaled pixels.
pub fn gamma_inverse(x: &mut [f32], g: f64) -> Result<()> {
    check_gamma(g)?;
    check_unit(x, "gamma_inverse")?;
    for v in x {
        *v = gamma_inverse_value(*v as f64, g) as f32;
    }
    Ok(())
}
