use crate::geometry::BBox;
use crate::mask::{Bitmask, SegMask};
use crate::types::Instance;

use super::SideTransform;

/// Nearest-neighbour source index for destination index `dst`.
#[inline]
fn nn(dst: u32, n_dst: u32, n_src: u32) -> u32 {
    (((dst as f64 + 0.5) * n_src as f64 / n_dst as f64) as u32).min(n_src - 1)
}

/// Maps a mask through the side's resize/flip/crop onto the target canvas.
/// Returns the canvas mask and the mask area after resizing, before cropping.
fn transform_mask(
    mask: &SegMask,
    side: &SideTransform,
    target: (u32, u32),
    full_area: bool,
) -> (SegMask, u64) {
    let src = mask.decode();
    let (th, tw) = target;
    let (rh, rw) = (side.resized_h, side.resized_w);
    let rows: Vec<u32> = (0..rh).map(|r| nn(r, rh, side.src_h)).collect();
    let cols: Vec<u32> = (0..rw).map(|c| nn(c, rw, side.src_w)).collect();
    let resized_at = |r: u32, c: u32| src.get(rows[r as usize], cols[c as usize]);

    let scaled_area = if full_area {
        (0..rh)
            .flat_map(|r| (0..rw).map(move |c| (r, c)))
            .filter(|&(r, c)| resized_at(r, c))
            .count() as u64
    } else {
        0
    };
    let canvas = Bitmask::from_fn(th, tw, |r, c| {
        let x = c + side.crop_x;
        let x = if side.hflip { rw - 1 - x } else { x };
        resized_at(r + side.crop_y, x)
    });
    (canvas.encode(), scaled_area)
}

/// Maps a box through the side's resize/flip/crop; unclipped.
pub fn transform_box(bbox: &BBox, side: &SideTransform) -> BBox {
    let sx = side.scale_x();
    let sy = side.scale_y();
    let mut b = BBox::new(bbox.x * sx, bbox.y * sy, bbox.w * sx, bbox.h * sy);
    if side.hflip {
        b.x = side.resized_w as f64 - b.x - b.w;
    }
    b.x -= side.crop_x as f64;
    b.y -= side.crop_y as f64;
    b
}

/// Moves instances of one source image onto the blend canvas.
///
/// Instances whose clipped geometry is empty, or whose visible fraction is
/// below `min_visible_fraction`, are dropped. Masked instances get their box
/// and area recomputed from the clipped mask.
pub fn transform_annotations(
    instances: &[Instance],
    side: &SideTransform,
    target: (u32, u32),
    min_visible_fraction: f64,
) -> Vec<Instance> {
    let (th, tw) = target;
    instances
        .iter()
        .filter_map(|inst| {
            let (bbox, mask, area, visible) = match &inst.mask {
                Some(m) => {
                    let (canvas, scaled_area) =
                        transform_mask(m, side, target, min_visible_fraction > 0.0);
                    let area = canvas.area();
                    let visible = if min_visible_fraction > 0.0 && scaled_area > 0 {
                        area as f64 / scaled_area as f64
                    } else {
                        1.0
                    };
                    (canvas.bbox(), Some(canvas), area as f64, visible)
                }
                None => {
                    let moved = transform_box(&inst.bbox, side);
                    let clipped = moved.clip(tw as f64, th as f64);
                    let visible = if moved.area() > 0.0 {
                        clipped.area() / moved.area()
                    } else {
                        0.0
                    };
                    (clipped, None, clipped.area(), visible)
                }
            };
            if area <= 0.0 || visible < min_visible_fraction {
                return None;
            }
            Some(Instance {
                bbox,
                mask,
                area,
                ..inst.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxed(b: [f64; 4]) -> Instance {
        Instance::from_box(1, 1, 1, BBox::from(b))
    }

    #[test]
    fn uniform_half_scale() {
        let side = SideTransform {
            resized_h: 50,
            resized_w: 50,
            ..SideTransform::identity(100, 100)
        };
        let out = transform_annotations(&[boxed([10.0, 10.0, 20.0, 20.0])], &side, (50, 50), 0.0);
        assert_eq!(out[0].bbox, BBox::new(5.0, 5.0, 10.0, 10.0));
    }

    #[test]
    fn outside_crop_dropped() {
        let side = SideTransform {
            crop_x: 50,
            ..SideTransform::identity(100, 100)
        };
        let out = transform_annotations(&[boxed([10.0, 10.0, 20.0, 20.0])], &side, (100, 50), 0.0);
        assert!(out.is_empty());
    }

    #[test]
    fn hflip_box() {
        let side = SideTransform {
            hflip: true,
            ..SideTransform::identity(100, 100)
        };
        let out = transform_annotations(&[boxed([10.0, 10.0, 20.0, 20.0])], &side, (100, 100), 0.0);
        assert_eq!(out[0].bbox, BBox::new(70.0, 10.0, 20.0, 20.0));
    }

    #[test]
    fn mask_follows_flip_and_crop() {
        let mask =
            Bitmask::from_fn(10, 10, |r, c| (2..5).contains(&r) && (1..4).contains(&c)).encode();
        let inst = Instance::from_mask(1, 1, 1, mask);
        let side = SideTransform {
            hflip: true,
            crop_x: 2,
            crop_y: 1,
            ..SideTransform::identity(10, 10)
        };
        let out = transform_annotations(std::slice::from_ref(&inst), &side, (8, 8), 0.0);
        // flipped cols 6..9, minus crop 2 -> 4..7; rows 2..5 minus 1 -> 1..4
        assert_eq!(out[0].bbox, BBox::new(4.0, 1.0, 3.0, 3.0));
        assert_eq!(out[0].area, 9.0);
        let direct = transform_box(&inst.bbox, &side);
        assert_eq!(direct, out[0].bbox);
    }

    #[test]
    fn min_visible_fraction_drops_partial() {
        let mask = Bitmask::from_fn(10, 10, |r, c| r < 4 && c < 4).encode();
        let inst = Instance::from_mask(1, 1, 1, mask);
        let side = SideTransform {
            crop_x: 2,
            ..SideTransform::identity(10, 10)
        };
        assert_eq!(
            transform_annotations(std::slice::from_ref(&inst), &side, (10, 8), 0.0).len(),
            1
        );
        assert_eq!(
            transform_annotations(std::slice::from_ref(&inst), &side, (10, 8), 0.5).len(),
            1
        );
        assert!(transform_annotations(&[inst], &side, (10, 8), 0.6).is_empty());
    }
}
