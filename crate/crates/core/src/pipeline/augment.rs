//! Training-time augmentation: horizontal flip, rotation, zoom.
//!
//! Applied in that order. Rotation is counterclockwise about the image
//! center with bilinear sampling and black (zero) fill outside the frame.
//! Zoom about the center magnifies with an implicit center crop for z > 1
//! and shrinks with zero fill for z < 1. Output dimensions always equal the
//! input's, and identity parameters (no flip, 0 degrees, zoom 1) reproduce
//! the input bitwise because aligned-grid bilinear sampling is exact.

use super::{PipelineError, RawImage};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip_prob: f64,
    /// Degrees, sampled uniformly.
    pub rotation_range_deg: (f64, f64),
    pub zoom_range: (f64, f64),
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            flip_prob: 0.5,
            rotation_range_deg: (0.0, 180.0),
            zoom_range: (0.4, 1.4),
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |message: String| Err(PipelineError::InvalidArgument { message });
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("flip_prob must be in [0, 1], got {}", self.flip_prob));
        }
        if self.rotation_range_deg.1 < self.rotation_range_deg.0 {
            return bad(format!(
                "rotation range ({}, {}) is empty",
                self.rotation_range_deg.0, self.rotation_range_deg.1
            ));
        }
        if self.zoom_range.0 <= 0.0 || self.zoom_range.1 < self.zoom_range.0 {
            return bad(format!(
                "zoom range ({}, {}) must be positive and nonempty",
                self.zoom_range.0, self.zoom_range.1
            ));
        }
        Ok(())
    }
}

fn flip_horizontal(img: &RawImage) -> RawImage {
    let (w, h) = (img.width(), img.height());
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.set(x, y, c, img.get(w - 1 - x, y, c));
            }
        }
    }
    out
}

/// Bilinear sample at a real-valued source coordinate; taps outside the
/// frame contribute zero (black fill).
fn sample_zero_fill(img: &RawImage, sx: f64, sy: f64, c: usize) -> f64 {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let tap = |xi: isize, yi: isize| -> f64 {
        if xi < 0 || yi < 0 || xi >= w || yi >= h {
            0.0
        } else {
            img.get(xi as usize, yi as usize, c) as f64
        }
    };
    let (x0, y0) = (x0 as isize, y0 as isize);
    (tap(x0, y0) * (1.0 - fx) + tap(x0 + 1, y0) * fx) * (1.0 - fy)
        + (tap(x0, y0 + 1) * (1.0 - fx) + tap(x0 + 1, y0 + 1) * fx) * fy
}

/// Resample through an inverse map from destination to source coordinates.
fn warp(img: &RawImage, map: impl Fn(f64, f64) -> (f64, f64)) -> RawImage {
    let (w, h) = (img.width(), img.height());
    let mut out = RawImage::filled(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map(x as f64, y as f64);
            for c in 0..3 {
                let v = sample_zero_fill(img, sx, sy, c);
                out.set(x, y, c, v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

fn rotate(img: &RawImage, theta_deg: f64) -> RawImage {
    let theta = theta_deg.to_radians();
    let (cos, sin) = (theta.cos(), theta.sin());
    let cx = (img.width() as f64 - 1.0) / 2.0;
    let cy = (img.height() as f64 - 1.0) / 2.0;
    // inverse of a visually counterclockwise rotation in y-down pixel coords
    warp(img, |x, y| {
        let dx = x - cx;
        let dy = y - cy;
        (cx + cos * dx - sin * dy, cy + sin * dx + cos * dy)
    })
}

fn zoom(img: &RawImage, z: f64) -> RawImage {
    let cx = (img.width() as f64 - 1.0) / 2.0;
    let cy = (img.height() as f64 - 1.0) / 2.0;
    warp(img, |x, y| (cx + (x - cx) / z, cy + (y - cy) / z))
}

/// Apply the augmentation chain with explicit parameters.
pub fn apply_augment(img: &RawImage, flip: bool, theta_deg: f64, zoom_factor: f64) -> RawImage {
    let flipped = if flip { flip_horizontal(img) } else { img.clone() };
    let rotated = rotate(&flipped, theta_deg);
    zoom(&rotated, zoom_factor)
}

/// Randomized augmentation. Always draws flip, angle, and zoom from `rng`
/// in that order, so the stream of draws is independent of their values.
pub fn augment(img: &RawImage, params: &AugmentParams, rng: &mut Rng) -> RawImage {
    let flip = rng.chance(params.flip_prob);
    let theta = rng.uniform(params.rotation_range_deg.0, params.rotation_range_deg.1);
    let z = rng.uniform(params.zoom_range.0, params.zoom_range.1);
    apply_augment(img, flip, theta, z)
}
