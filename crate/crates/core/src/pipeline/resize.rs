//! Bilinear resize with half-pixel center alignment.

use super::{PipelineError, RawImage};

/// Resample to `out_w` x `out_h`. Each destination pixel center maps to the
/// source coordinate (dst + 0.5) * scale - 0.5 and is bilinearly interpolated
/// from the four surrounding pixels, with taps clamped to the image edge.
/// Output values never leave the source value range.
pub fn resize_bilinear(
    img: &RawImage,
    out_w: usize,
    out_h: usize,
) -> Result<RawImage, PipelineError> {
    if out_w == 0 || out_h == 0 {
        return Err(PipelineError::InvalidArgument {
            message: format!("target extents must be positive, got {out_w}x{out_h}"),
        });
    }
    let (w, h) = (img.width(), img.height());
    let scale_x = w as f64 / out_w as f64;
    let scale_y = h as f64 / out_h as f64;
    let mut out = vec![0u8; out_w * out_h * 3];

    for y in 0..out_h {
        let sy = (y as f64 + 0.5) * scale_y - 0.5;
        let y0 = sy.floor();
        let fy = sy - y0;
        let y0c = (y0 as isize).clamp(0, h as isize - 1) as usize;
        let y1c = (y0 as isize + 1).clamp(0, h as isize - 1) as usize;
        for x in 0..out_w {
            let sx = (x as f64 + 0.5) * scale_x - 0.5;
            let x0 = sx.floor();
            let fx = sx - x0;
            let x0c = (x0 as isize).clamp(0, w as isize - 1) as usize;
            let x1c = (x0 as isize + 1).clamp(0, w as isize - 1) as usize;
            for c in 0..3 {
                let v00 = img.get(x0c, y0c, c) as f64;
                let v10 = img.get(x1c, y0c, c) as f64;
                let v01 = img.get(x0c, y1c, c) as f64;
                let v11 = img.get(x1c, y1c, c) as f64;
                let top = v00 * (1.0 - fx) + v10 * fx;
                let bottom = v01 * (1.0 - fx) + v11 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out[(y * out_w + x) * 3 + c] = v.round() as u8;
            }
        }
    }
    RawImage::new(out_w, out_h, out)
}
