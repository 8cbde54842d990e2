//! Confusion-guided mixup.
//!
//! An input image is paired with a training image that contains a category
//! it is often confused with. Both images are resized onto a shared canvas
//! whose size is drawn from a fraction of their mean dimensions, randomly
//! flipped and cropped, then blended pixel-wise. The blended image keeps the
//! instances of both sources. Brightness and colour jitter are applied to
//! the blended output only.

mod annotations;
mod image_ops;
mod pipeline;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::confusion::GuidedPairs;
use crate::error::{Error, Result};
use crate::types::{CategoryId, Dataset, ImageId};

pub use annotations::{transform_annotations, transform_box};
pub use image_ops::{apply_geometric, apply_photometric, blend, resize_bilinear};
pub use pipeline::{
    assemble_dataset, augment_dataset, augment_sample, augment_with_plan, AugmentStream,
    AugmentedSample, DirectorySource, EmittedSample, ImageSource, ManifestEntry, MemorySource,
    OutputDataset, SampleOutcome,
};

/// Blend weight of the input image.
pub const DEFAULT_GAMMA: f64 = 0.5;
/// Canvas size range as fractions of the mean source dimensions.
pub const DEFAULT_RESIZE_RANGE: [f64; 2] = [0.4, 0.6];
/// Probability that a training image is replaced by a mixed sample.
pub const DEFAULT_BERNOULLI_P: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub gamma: f64,
    pub resize_range: [f64; 2],
    pub bernoulli_p: f64,
    pub hflip_p: f64,
    pub brightness_delta: f64,
    pub color_jitter: f64,
    pub min_visible_fraction: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            resize_range: DEFAULT_RESIZE_RANGE,
            bernoulli_p: DEFAULT_BERNOULLI_P,
            hflip_p: 0.5,
            brightness_delta: 0.2,
            color_jitter: 0.1,
            min_visible_fraction: 0.0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Disables brightness and colour jitter.
    pub fn without_photometrics(mut self) -> Self {
        self.brightness_delta = 0.0;
        self.color_jitter = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Invalid(format!("{name} must be in [0,1], got {v}")))
            }
        };
        unit("gamma", self.gamma)?;
        unit("bernoulli_p", self.bernoulli_p)?;
        unit("hflip_p", self.hflip_p)?;
        unit("min_visible_fraction", self.min_visible_fraction)?;
        let [lo, hi] = self.resize_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Invalid(format!(
                "resize range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
            )));
        }
        for (name, v) in [
            ("brightness_delta", self.brightness_delta),
            ("color_jitter", self.color_jitter),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Invalid(format!("{name} must be in [0,1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Geometry applied to one side of a blend: resize to `resized_*`, flip,
/// then crop a target-sized window at `(crop_x, crop_y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideTransform {
    pub src_h: u32,
    pub src_w: u32,
    pub resized_h: u32,
    pub resized_w: u32,
    pub crop_x: u32,
    pub crop_y: u32,
    pub hflip: bool,
}

impl SideTransform {
    pub fn identity(h: u32, w: u32) -> Self {
        Self {
            src_h: h,
            src_w: w,
            resized_h: h,
            resized_w: w,
            crop_x: 0,
            crop_y: 0,
            hflip: false,
        }
    }

    pub fn scale_x(&self) -> f64 {
        self.resized_w as f64 / self.src_w as f64
    }

    pub fn scale_y(&self) -> f64 {
        self.resized_h as f64 / self.src_h as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Photometric {
    pub brightness: f64,
    pub channel_gain: [f64; 3],
}

impl Photometric {
    pub const NEUTRAL: Photometric = Photometric {
        brightness: 1.0,
        channel_gain: [1.0; 3],
    };

    pub fn is_neutral(&self) -> bool {
        *self == Self::NEUTRAL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendPlan {
    pub target_h: u32,
    pub target_w: u32,
    pub a: SideTransform,
    pub b: SideTransform,
    pub photometric: Photometric,
}

impl BlendPlan {
    /// Plan that leaves two same-sized images untouched.
    pub fn identity(h: u32, w: u32) -> Self {
        Self {
            target_h: h,
            target_w: w,
            a: SideTransform::identity(h, w),
            b: SideTransform::identity(h, w),
            photometric: Photometric::NEUTRAL,
        }
    }

    pub fn target(&self) -> (u32, u32) {
        (self.target_h, self.target_w)
    }
}

/// Canvas size for sources `(h1, w1)` and `(h2, w2)` at fractions `u_h`, `u_w`
/// of their mean height and width.
pub fn target_size(dims_a: (u32, u32), dims_b: (u32, u32), u_h: f64, u_w: f64) -> (u32, u32) {
    let mean_h = (dims_a.0 + dims_b.0) as f64 / 2.0;
    let mean_w = (dims_a.1 + dims_b.1) as f64 / 2.0;
    (
        ((mean_h * u_h).round() as u32).max(1),
        ((mean_w * u_w).round() as u32).max(1),
    )
}

fn plan_side<R: Rng>(
    dims: (u32, u32),
    target: (u32, u32),
    hflip_p: f64,
    rng: &mut R,
) -> SideTransform {
    let (h, w) = dims;
    let (th, tw) = target;
    let scale = (th as f64 / h as f64).max(tw as f64 / w as f64);
    let resized_h = ((h as f64 * scale).round() as u32).max(th);
    let resized_w = ((w as f64 * scale).round() as u32).max(tw);
    let hflip = rng.random_bool(hflip_p);
    let crop_y = rng.random_range(0..=resized_h - th);
    let crop_x = rng.random_range(0..=resized_w - tw);
    SideTransform {
        src_h: h,
        src_w: w,
        resized_h,
        resized_w,
        crop_x,
        crop_y,
        hflip,
    }
}

fn jitter<R: Rng>(delta: f64, rng: &mut R) -> f64 {
    if delta == 0.0 {
        1.0
    } else {
        rng.random_range(1.0 - delta..=1.0 + delta)
    }
}

/// Samples the geometric and photometric plan for a pair of images of
/// `(height, width)` dims. Each side is scaled to cover the canvas and then
/// cropped at a random offset.
pub fn plan_blend<R: Rng>(
    dims_a: (u32, u32),
    dims_b: (u32, u32),
    config: &AugmentConfig,
    rng: &mut R,
) -> BlendPlan {
    let [lo, hi] = config.resize_range;
    let u_h = rng.random_range(lo..=hi);
    let u_w = rng.random_range(lo..=hi);
    let target = target_size(dims_a, dims_b, u_h, u_w);
    let a = plan_side(dims_a, target, config.hflip_p, rng);
    let b = plan_side(dims_b, target, config.hflip_p, rng);
    let brightness = jitter(config.brightness_delta, rng);
    let channel_gain = [
        jitter(config.color_jitter, rng),
        jitter(config.color_jitter, rng),
        jitter(config.color_jitter, rng),
    ];
    BlendPlan {
        target_h: target.0,
        target_w: target.1,
        a,
        b,
        photometric: Photometric {
            brightness,
            channel_gain,
        },
    }
}

/// Per-sample RNG: the config seed selects the key, the sample index the stream.
pub fn sample_rng(seed: u64, sample_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample_index);
    rng
}

/// Which images contain which categories.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CategoryIndex {
    pub images_by_category: BTreeMap<CategoryId, BTreeSet<ImageId>>,
    pub categories_by_image: BTreeMap<ImageId, BTreeSet<CategoryId>>,
}

impl CategoryIndex {
    pub fn build(dataset: &Dataset) -> Self {
        let mut index = Self::default();
        for im in &dataset.images {
            index.categories_by_image.entry(im.id).or_default();
        }
        for ann in &dataset.annotations {
            index
                .images_by_category
                .entry(ann.category_id)
                .or_default()
                .insert(ann.image_id);
            index
                .categories_by_image
                .entry(ann.image_id)
                .or_default()
                .insert(ann.category_id);
        }
        index
    }
}

/// Candidate partners: images holding a category `j` that some guided pair
/// `(i, j)` links to a category `i` of the input image.
pub fn partner_candidates(
    input: ImageId,
    index: &CategoryIndex,
    pairs: &GuidedPairs,
) -> BTreeSet<ImageId> {
    let Some(present) = index.categories_by_image.get(&input) else {
        return BTreeSet::new();
    };
    let wanted: BTreeSet<CategoryId> = present.iter().flat_map(|&i| pairs.partners_of(i)).collect();
    wanted
        .iter()
        .filter_map(|j| index.images_by_category.get(j))
        .flatten()
        .copied()
        .filter(|&img| img != input)
        .collect()
}

/// Uniformly picks one partner candidate, or `None` if there are none.
pub fn select_partner<R: Rng>(
    input: ImageId,
    index: &CategoryIndex,
    pairs: &GuidedPairs,
    rng: &mut R,
) -> Option<ImageId> {
    let candidates = partner_candidates(input, index, pairs);
    if candidates.is_empty() {
        return None;
    }
    let pick = rng.random_range(0..candidates.len());
    candidates.into_iter().nth(pick)
}
