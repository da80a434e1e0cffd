//! Geometric augmentations applied jointly to an image and its label plane.
//!
//! Images are resampled bilinearly, labels by nearest neighbor, so a label
//! plane never gains values it did not have.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume_io::Plane;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipAxis {
    /// Mirror columns (left-right).
    X,
    /// Mirror rows (top-bottom).
    Y,
}

/// Crop rectangle in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl CropBox {
    /// Crop of relative size `scale` placed by two unit draws.
    pub fn from_draws(width: usize, height: usize, scale: f64, ux: f64, uy: f64) -> Result<Self> {
        let cw = (scale * width as f64).round();
        let ch = (scale * height as f64).round();
        if !(cw >= 1.0 && ch >= 1.0) {
            return Err(Error::CropTooSmall {
                width: cw.max(0.0) as usize,
                height: ch.max(0.0) as usize,
            });
        }
        let cw = (cw as usize).min(width);
        let ch = (ch as usize).min(height);
        let x0 = ((ux * (width - cw + 1) as f64) as usize).min(width - cw);
        let y0 = ((uy * (height - ch + 1) as f64) as usize).min(height - ch);
        Ok(Self {
            x0,
            y0,
            width: cw,
            height: ch,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            width,
            height,
        }
    }
}

fn check_pair(image: &Plane<f32>, mask: &Plane<u8>) -> Result<()> {
    if !image.same_shape(mask) {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} vs mask {}x{}",
            image.height(),
            image.width(),
            mask.height(),
            mask.width()
        )));
    }
    Ok(())
}

fn flip_plane<T: Copy>(p: &Plane<T>, axis: FlipAxis) -> Plane<T> {
    let (w, h) = (p.width(), p.height());
    let data = (0..h)
        .flat_map(|y| {
            (0..w).map(move |x| match axis {
                FlipAxis::X => (w - 1 - x, y),
                FlipAxis::Y => (x, h - 1 - y),
            })
        })
        .map(|(x, y)| *p.get(x, y))
        .collect();
    Plane::new(w, h, data).expect("same shape")
}

pub fn flip(
    image: &Plane<f32>,
    mask: &Plane<u8>,
    axis: FlipAxis,
) -> Result<(Plane<f32>, Plane<u8>)> {
    check_pair(image, mask)?;
    Ok((flip_plane(image, axis), flip_plane(mask, axis)))
}

/// Source coordinate of output index `i` when stretching `len` samples
/// starting at `start` over `out` samples, corners aligned.
#[inline]
fn source_coord(i: usize, start: usize, len: usize, out: usize) -> f64 {
    if out == 1 {
        start as f64 + (len - 1) as f64 / 2.0
    } else {
        start as f64 + i as f64 * (len - 1) as f64 / (out - 1) as f64
    }
}

/// Crops `crop` from both planes and resizes back to the original shape.
pub fn crop_resize(
    image: &Plane<f32>,
    mask: &Plane<u8>,
    crop: CropBox,
) -> Result<(Plane<f32>, Plane<u8>)> {
    check_pair(image, mask)?;
    if crop.width == 0 || crop.height == 0 {
        return Err(Error::CropTooSmall {
            width: crop.width,
            height: crop.height,
        });
    }
    let (w, h) = (image.width(), image.height());
    if crop.x0 + crop.width > w || crop.y0 + crop.height > h {
        return Err(Error::ShapeMismatch(format!(
            "crop {crop:?} exceeds {h}x{w}"
        )));
    }
    let mut img = Vec::with_capacity(w * h);
    let mut lab = Vec::with_capacity(w * h);
    for oy in 0..h {
        let sy = source_coord(oy, crop.y0, crop.height, h);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(crop.y0 + crop.height - 1);
        let fy = sy - y0 as f64;
        let ny = ((sy + 0.5).floor() as usize).min(crop.y0 + crop.height - 1);
        for ox in 0..w {
            let sx = source_coord(ox, crop.x0, crop.width, w);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(crop.x0 + crop.width - 1);
            let fx = sx - x0 as f64;
            let v = if fx == 0.0 && fy == 0.0 {
                *image.get(x0, y0)
            } else {
                let top = *image.get(x0, y0) as f64 * (1.0 - fx) + *image.get(x1, y0) as f64 * fx;
                let bot = *image.get(x0, y1) as f64 * (1.0 - fx) + *image.get(x1, y1) as f64 * fx;
                (top * (1.0 - fy) + bot * fy) as f32
            };
            img.push(v);
            let nx = ((sx + 0.5).floor() as usize).min(crop.x0 + crop.width - 1);
            lab.push(*mask.get(nx, ny));
        }
    }
    Ok((Plane::new(w, h, img)?, Plane::new(w, h, lab)?))
}
