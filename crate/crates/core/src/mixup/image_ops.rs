use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

use super::{Photometric, SideTransform};

#[inline]
fn to_u8(v: f64) -> u8 {
    // f64::round rounds half away from zero
    v.round().clamp(0.0, 255.0) as u8
}

/// Bilinear resize with half-pixel centers. Same-size input is copied.
pub fn resize_bilinear(src: &RgbImage, height: u32, width: u32) -> RgbImage {
    let (sw, sh) = src.dimensions();
    if (sh, sw) == (height, width) {
        return src.clone();
    }
    let axis = |dst: u32, n_dst: u32, n_src: u32| {
        let pos =
            ((dst as f64 + 0.5) * n_src as f64 / n_dst as f64 - 0.5).clamp(0.0, (n_src - 1) as f64);
        let lo = pos.floor() as u32;
        let hi = (lo + 1).min(n_src - 1);
        (lo, hi, pos - lo as f64)
    };
    let cols: Vec<_> = (0..width).map(|c| axis(c, width, sw)).collect();
    RgbImage::from_fn(width, height, |c, r| {
        let (y0, y1, wy) = axis(r, height, sh);
        let (x0, x1, wx) = cols[c as usize];
        let p00 = src.get_pixel(x0, y0).0;
        let p01 = src.get_pixel(x1, y0).0;
        let p10 = src.get_pixel(x0, y1).0;
        let p11 = src.get_pixel(x1, y1).0;
        let mut out = [0u8; 3];
        for ch in 0..3 {
            let top = p00[ch] as f64 * (1.0 - wx) + p01[ch] as f64 * wx;
            let bottom = p10[ch] as f64 * (1.0 - wx) + p11[ch] as f64 * wx;
            out[ch] = to_u8(top * (1.0 - wy) + bottom * wy);
        }
        Rgb(out)
    })
}

/// Resize, optional horizontal flip, then crop to the target window.
pub fn apply_geometric(
    image: &RgbImage,
    side: &SideTransform,
    target: (u32, u32),
) -> Result<RgbImage> {
    let (w, h) = image.dimensions();
    if (h, w) != (side.src_h, side.src_w) {
        return Err(Error::ImageDims {
            expected: (side.src_h, side.src_w),
            actual: (h, w),
        });
    }
    let resized = resize_bilinear(image, side.resized_h, side.resized_w);
    let (th, tw) = target;
    let rw = side.resized_w;
    Ok(RgbImage::from_fn(tw, th, |c, r| {
        let x = c + side.crop_x;
        let x = if side.hflip { rw - 1 - x } else { x };
        *resized.get_pixel(x, r + side.crop_y)
    }))
}

/// Per-pixel `round(gamma * a + (1 - gamma) * b)`, clamped to 8 bits.
pub fn blend(a: &RgbImage, b: &RgbImage, gamma: f64) -> Result<RgbImage> {
    if a.dimensions() != b.dimensions() {
        let (aw, ah) = a.dimensions();
        let (bw, bh) = b.dimensions();
        return Err(Error::ImageDims {
            expected: (ah, aw),
            actual: (bh, bw),
        });
    }
    let mut out = RgbImage::new(a.width(), a.height());
    for ((o, pa), pb) in out.pixels_mut().zip(a.pixels()).zip(b.pixels()) {
        for ch in 0..3 {
            o.0[ch] = to_u8(gamma * pa.0[ch] as f64 + (1.0 - gamma) * pb.0[ch] as f64);
        }
    }
    Ok(out)
}

pub fn apply_photometric(image: &mut RgbImage, p: &Photometric) {
    if p.is_neutral() {
        return;
    }
    for px in image.pixels_mut() {
        for ch in 0..3 {
            px.0[ch] = to_u8(px.0[ch] as f64 * p.brightness * p.channel_gain[ch]);
        }
    }
}
