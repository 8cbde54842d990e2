//! Synthetic datasets and noisy predictions for checking the pipeline
//! without trained models.
//!
//! Images are flat-coloured canvases with filled rectangles and ellipses.
//! Instance masks are computed analytically from the shape parameters.

use std::collections::BTreeMap;

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou, BBox};
use crate::mask::{mask_iou, Bitmask, SegMask};
use crate::mixup::sample_rng;
use crate::types::{
    sort_by_score_desc, Category, Dataset, ImageGroups, ImageId, ImageRecord, Instance,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_images: usize,
    pub n_categories: usize,
    /// Inclusive range of instances per image.
    pub instances_per_image: (usize, usize),
    /// Inclusive height range in pixels.
    pub height_range: (u32, u32),
    /// Inclusive width range in pixels.
    pub width_range: (u32, u32),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_images: 20,
            n_categories: 3,
            instances_per_image: (1, 4),
            height_range: (48, 96),
            width_range: (48, 96),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.instances_per_image;
        if self.n_images == 0 || self.n_categories == 0 || lo > hi || hi == 0 {
            return Err(Error::Invalid(
                "synthetic counts must be positive with lo <= hi".into(),
            ));
        }
        for (name, (lo, hi)) in [("height", self.height_range), ("width", self.width_range)] {
            if lo < 8 || lo > hi {
                return Err(Error::Invalid(format!(
                    "{name} range must satisfy 8 <= lo <= hi"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Shape {
    Rect,
    Ellipse,
}

fn shape_mask(shape: Shape, bbox: (u32, u32, u32, u32), height: u32, width: u32) -> SegMask {
    let (x0, y0, w, h) = bbox;
    let m = match shape {
        Shape::Rect => Bitmask::from_fn(height, width, |r, c| {
            (x0..x0 + w).contains(&c) && (y0..y0 + h).contains(&r)
        }),
        Shape::Ellipse => {
            let (cx, cy) = (x0 as f64 + w as f64 / 2.0, y0 as f64 + h as f64 / 2.0);
            let (rx, ry) = (w as f64 / 2.0, h as f64 / 2.0);
            Bitmask::from_fn(height, width, |r, c| {
                let dx = (c as f64 + 0.5 - cx) / rx;
                let dy = (r as f64 + 0.5 - cy) / ry;
                dx * dx + dy * dy <= 1.0
            })
        }
    };
    m.encode()
}

fn category_color(category: u64) -> Rgb<u8> {
    // spread hues with a multiplicative hash
    let h = category.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    Rgb([
        (h >> 16) as u8 | 0x40,
        (h >> 32) as u8 | 0x40,
        (h >> 48) as u8 | 0x40,
    ])
}

/// Instances of one image overlap each other (box or mask IoU) by less than this.
pub const MAX_INSTANCE_OVERLAP: f64 = 0.3;
const PLACEMENT_ATTEMPTS: usize = 64;

fn worst_overlap(mask: &SegMask, placed: &[SegMask]) -> f64 {
    placed
        .iter()
        .map(|p| {
            let m = mask_iou(mask, p).expect("same grid");
            m.max(box_iou(&mask.bbox(), &p.bbox()))
        })
        .fold(0.0, f64::max)
}

/// Rejection-samples a shape that keeps overlaps with `placed` below
/// [`MAX_INSTANCE_OVERLAP`]; falls back to the least overlapping attempt.
fn place_shape<R: Rng>(
    shape: Shape,
    height: u32,
    width: u32,
    placed: &[SegMask],
    rng: &mut R,
) -> SegMask {
    let mut best: Option<(f64, SegMask)> = None;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let w = rng.random_range((width / 6).max(3)..=(width * 2 / 5).max(4));
        let h = rng.random_range((height / 6).max(3)..=(height * 2 / 5).max(4));
        let x0 = rng.random_range(0..=width - w);
        let y0 = rng.random_range(0..=height - h);
        let mask = shape_mask(shape, (x0, y0, w, h), height, width);
        let overlap = worst_overlap(&mask, placed);
        if overlap < MAX_INSTANCE_OVERLAP {
            return mask;
        }
        if best.as_ref().is_none_or(|(o, _)| overlap < *o) {
            best = Some((overlap, mask));
        }
    }
    best.expect("at least one attempt").1
}

/// Generates a dataset and its rendered images. Deterministic per seed.
pub fn gen_dataset(config: &SynthConfig) -> Result<(Dataset, BTreeMap<ImageId, RgbImage>)> {
    config.validate()?;
    let categories: Vec<Category> = (1..=config.n_categories as u64)
        .map(|id| Category {
            id,
            name: format!("category_{id}"),
        })
        .collect();
    let mut dataset = Dataset {
        categories,
        ..Dataset::default()
    };
    let mut pixels = BTreeMap::new();
    let mut next_ann = 1u64;
    for idx in 0..config.n_images {
        let mut rng = sample_rng(config.seed, idx as u64);
        let image_id = idx as u64 + 1;
        let height = rng.random_range(config.height_range.0..=config.height_range.1);
        let width = rng.random_range(config.width_range.0..=config.width_range.1);
        let bg = Rgb([
            rng.random_range(0..64),
            rng.random_range(0..64),
            rng.random_range(0..64),
        ]);
        let mut canvas = RgbImage::from_pixel(width, height, bg);
        let count = rng.random_range(config.instances_per_image.0..=config.instances_per_image.1);
        let mut placed: Vec<SegMask> = Vec::with_capacity(count);
        for _ in 0..count {
            let category = rng.random_range(1..=config.n_categories as u64);
            let shape = if rng.random_bool(0.5) {
                Shape::Rect
            } else {
                Shape::Ellipse
            };
            let mask = place_shape(shape, height, width, &placed, &mut rng);
            placed.push(mask.clone());
            let color = category_color(category);
            for (s, e) in mask.foreground_intervals() {
                for flat in s..e {
                    canvas.put_pixel(
                        (flat / height as u64) as u32,
                        (flat % height as u64) as u32,
                        color,
                    );
                }
            }
            dataset
                .annotations
                .push(Instance::from_mask(next_ann, image_id, category, mask));
            next_ann += 1;
        }
        dataset.images.push(ImageRecord {
            id: image_id,
            width,
            height,
            file_name: format!("{image_id:06}.png"),
        });
        pixels.insert(image_id, canvas);
    }
    Ok((dataset, pixels))
}

/// How a simulated model deviates from ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    /// Std-dev of box edge jitter, as a fraction of box size.
    pub box_jitter_sigma: f64,
    pub drop_rate: f64,
    /// Expected false positives per image (Poisson).
    pub fp_rate: f64,
    /// Row-stochastic category flip matrix in dataset category order.
    /// Empty means identity.
    #[serde(default)]
    pub confusion: Vec<Vec<f64>>,
    pub score_mean_tp: f64,
    pub score_mean_fp: f64,
    #[serde(default)]
    pub score_sigma: f64,
}

/// Names accepted by [`NoiseProfile::builtin`].
pub const BUILTIN_PROFILES: [&str; 5] = ["perfect", "controller", "moderate", "noisy", "confused"];

impl NoiseProfile {
    /// Predictions identical to ground truth.
    pub fn zero_noise() -> Self {
        Self {
            box_jitter_sigma: 0.0,
            drop_rate: 0.0,
            fp_rate: 0.0,
            confusion: Vec::new(),
            score_mean_tp: 0.9,
            score_mean_fp: 0.3,
            score_sigma: 0.0,
        }
    }

    pub fn moderate() -> Self {
        Self {
            box_jitter_sigma: 0.08,
            drop_rate: 0.1,
            fp_rate: 0.5,
            confusion: Vec::new(),
            score_mean_tp: 0.8,
            score_mean_fp: 0.35,
            score_sigma: 0.12,
        }
    }

    /// Tight boxes, few misses, confident scores.
    pub fn controller() -> Self {
        Self {
            box_jitter_sigma: 0.02,
            drop_rate: 0.05,
            fp_rate: 0.1,
            confusion: Vec::new(),
            score_mean_tp: 0.9,
            score_mean_fp: 0.2,
            score_sigma: 0.05,
        }
    }

    pub fn noisy() -> Self {
        Self {
            box_jitter_sigma: 0.15,
            drop_rate: 0.3,
            fp_rate: 1.5,
            confusion: Vec::new(),
            score_mean_tp: 0.6,
            score_mean_fp: 0.45,
            score_sigma: 0.2,
        }
    }

    /// Moderate geometry; each category is mistaken for the next one
    /// (cyclically) 40% of the time.
    pub fn confused(n_categories: usize) -> Self {
        let confusion = (0..n_categories)
            .map(|i| {
                let mut row = vec![0.0; n_categories];
                row[i] += 0.6;
                row[(i + 1) % n_categories] += 0.4;
                row
            })
            .collect();
        Self {
            confusion,
            ..Self::moderate()
        }
    }

    /// Looks up a named preset.
    pub fn builtin(name: &str, n_categories: usize) -> Option<Self> {
        Some(match name {
            "perfect" => Self::zero_noise(),
            "controller" => Self::controller(),
            "moderate" => Self::moderate(),
            "noisy" => Self::noisy(),
            "confused" => Self::confused(n_categories),
            _ => return None,
        })
    }

    pub fn validate(&self, n_categories: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.drop_rate) {
            return Err(Error::Invalid("drop_rate must be in [0,1]".into()));
        }
        if !(self.fp_rate >= 0.0 && self.fp_rate.is_finite()) {
            return Err(Error::Invalid("fp_rate must be non-negative".into()));
        }
        if !(self.box_jitter_sigma >= 0.0 && self.score_sigma >= 0.0) {
            return Err(Error::Invalid("sigmas must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.score_mean_tp) || !(0.0..=1.0).contains(&self.score_mean_fp)
        {
            return Err(Error::Invalid("score means must be in [0,1]".into()));
        }
        if !self.confusion.is_empty() {
            if self.confusion.len() != n_categories {
                return Err(Error::Invalid(format!(
                    "confusion has {} rows, dataset has {n_categories} categories",
                    self.confusion.len()
                )));
            }
            for (i, row) in self.confusion.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if row.len() != n_categories
                    || row.iter().any(|&v| v < 0.0)
                    || (sum - 1.0).abs() > 1e-9
                {
                    return Err(Error::Invalid(format!(
                        "confusion row {i} is not a probability row"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn draw_score<R: Rng>(mean: f64, sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        return mean;
    }
    let normal = Normal::new(mean, sigma).expect("validated sigma");
    normal.sample(rng).clamp(0.0, 1.0)
}

fn draw_category<R: Rng>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // numerical tail: last category with positive mass
    row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Moves a mask's content from `from` onto the integer box `to`
/// (nearest-neighbour), clipped to the grid.
fn warp_mask(mask: &SegMask, from: &BBox, to: (i64, i64, i64, i64)) -> SegMask {
    let src = mask.decode();
    let (h, w) = (mask.height() as i64, mask.width() as i64);
    let (tx, ty, tw, th) = to;
    Bitmask::from_fn(mask.height(), mask.width(), |r, c| {
        let (r, c) = (r as i64, c as i64);
        if c < tx || c >= tx + tw || r < ty || r >= ty + th {
            return false;
        }
        let sx = from.x + ((c - tx) as f64 + 0.5) * from.w / tw as f64;
        let sy = from.y + ((r - ty) as f64 + 0.5) * from.h / th as f64;
        let (sx, sy) = (sx.floor() as i64, sy.floor() as i64);
        (0..w).contains(&sx) && (0..h).contains(&sy) && src.get(sy as u32, sx as u32)
    })
    .encode()
}

fn jitter_instance<R: Rng>(
    gt: &Instance,
    sigma: f64,
    dims: (u32, u32),
    rng: &mut R,
) -> Option<(BBox, Option<SegMask>)> {
    if sigma == 0.0 {
        return Some((gt.bbox, gt.mask.clone()));
    }
    let b = gt.bbox;
    let n = Normal::new(0.0, sigma).expect("validated sigma");
    let nx = b.x + n.sample(rng) * b.w;
    let ny = b.y + n.sample(rng) * b.h;
    let nw = (b.w * (1.0 + n.sample(rng))).max(1.0);
    let nh = (b.h * (1.0 + n.sample(rng))).max(1.0);
    let (h, w) = dims;
    match &gt.mask {
        Some(mask) => {
            let to = (
                nx.round() as i64,
                ny.round() as i64,
                (nw.round() as i64).max(1),
                (nh.round() as i64).max(1),
            );
            let warped = warp_mask(mask, &b, to);
            (!warped.is_empty()).then(|| (warped.bbox(), Some(warped)))
        }
        None => {
            let clipped = BBox::new(nx, ny, nw, nh).clip(w as f64, h as f64);
            (clipped.area() > 0.0).then_some((clipped, None))
        }
    }
}

/// Simulates one model's predictions on `gt`. Deterministic per seed.
pub fn perturb_predictions(gt: &Dataset, profile: &NoiseProfile, seed: u64) -> Result<ImageGroups> {
    let categories: Vec<u64> = gt.category_ids().into_iter().collect();
    profile.validate(categories.len())?;
    let by_image = gt.gt_by_image();
    let poisson =
        (profile.fp_rate > 0.0).then(|| Poisson::new(profile.fp_rate).expect("validated rate"));
    let mut out = ImageGroups::new();
    let mut next_id = 1u64;
    for (idx, record) in gt.images.iter().enumerate() {
        let mut rng = sample_rng(seed, idx as u64);
        let dims = (record.height, record.width);
        let mut preds = Vec::new();
        for g in &by_image[&record.id] {
            if rng.random_bool(profile.drop_rate) {
                continue;
            }
            let category = if profile.confusion.is_empty() {
                g.category_id
            } else {
                let row = categories.binary_search(&g.category_id).map_err(|_| {
                    Error::Invalid(format!("annotation {} has unknown category", g.id))
                })?;
                categories[draw_category(&profile.confusion[row], &mut rng)]
            };
            let Some((bbox, mask)) = jitter_instance(g, profile.box_jitter_sigma, dims, &mut rng)
            else {
                continue;
            };
            let score = draw_score(profile.score_mean_tp, profile.score_sigma, &mut rng);
            preds.push(Instance {
                id: 0,
                image_id: record.id,
                category_id: category,
                area: mask.as_ref().map_or(bbox.area(), |m| m.area() as f64),
                bbox,
                mask,
                score: Some(score),
            });
        }
        let n_fp = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..n_fp {
            let w = rng.random_range(2..=(record.width / 3).max(2));
            let h = rng.random_range(2..=(record.height / 3).max(2));
            let x0 = rng.random_range(0..=record.width - w);
            let y0 = rng.random_range(0..=record.height - h);
            let mask = shape_mask(Shape::Rect, (x0, y0, w, h), record.height, record.width);
            let category = categories[rng.random_range(0..categories.len())];
            let score = draw_score(profile.score_mean_fp, profile.score_sigma, &mut rng);
            preds.push(Instance {
                id: 0,
                image_id: record.id,
                category_id: category,
                bbox: mask.bbox(),
                area: mask.area() as f64,
                mask: Some(mask),
                score: Some(score),
            });
        }
        sort_by_score_desc(&mut preds);
        for p in &mut preds {
            p.id = next_id;
            next_id += 1;
        }
        out.insert(record.id, preds);
    }
    Ok(out)
}
