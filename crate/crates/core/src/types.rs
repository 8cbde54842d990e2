use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou, BBox};
use crate::mask::{mask_iou, SegMask};

pub type ImageId = u64;
pub type CategoryId = u64;

/// Instances grouped per image, keyed by ascending image id.
pub type ImageGroups = BTreeMap<ImageId, Vec<Instance>>;

/// Which geometry IoU is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouMode {
    #[default]
    Box,
    Mask,
}

impl std::str::FromStr for IouMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" | "bbox" => Ok(IouMode::Box),
            "mask" | "segm" => Ok(IouMode::Mask),
            other => Err(Error::Invalid(format!("unknown iou mode {other:?}"))),
        }
    }
}

/// One annotated or predicted object. Predictions carry a score.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub image_id: ImageId,
    pub category_id: CategoryId,
    pub bbox: BBox,
    pub mask: Option<SegMask>,
    pub area: f64,
    pub score: Option<f64>,
}

impl Instance {
    /// Ground-truth instance from a mask; box and area derive from the mask.
    pub fn from_mask(id: u64, image_id: ImageId, category_id: CategoryId, mask: SegMask) -> Self {
        Self {
            id,
            image_id,
            category_id,
            bbox: mask.bbox(),
            area: mask.area() as f64,
            mask: Some(mask),
            score: None,
        }
    }

    /// Box-only ground-truth instance.
    pub fn from_box(id: u64, image_id: ImageId, category_id: CategoryId, bbox: BBox) -> Self {
        Self {
            id,
            image_id,
            category_id,
            area: bbox.area(),
            bbox,
            mask: None,
            score: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn is_prediction(&self) -> bool {
        self.score.is_some()
    }

    pub fn score_or_zero(&self) -> f64 {
        self.score.unwrap_or(0.0)
    }

    pub fn iou(&self, other: &Instance, mode: IouMode) -> Result<f64> {
        match mode {
            IouMode::Box => Ok(box_iou(&self.bbox, &other.bbox)),
            IouMode::Mask => match (&self.mask, &other.mask) {
                (Some(a), Some(b)) => mask_iou(a, b),
                _ => Err(Error::Invalid(format!(
                    "mask IoU requested but instance {} or {} (image {}) has no mask",
                    self.id, other.id, self.image_id
                ))),
            },
        }
    }
}

/// Stable sort by descending score; ties keep input order.
pub fn sort_by_score_desc(instances: &mut [Instance]) {
    instances.sort_by(|a, b| b.score_or_zero().total_cmp(&a.score_or_zero()));
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: ImageId,
    pub width: u32,
    pub height: u32,
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<Instance>,
    pub categories: Vec<Category>,
}

impl Dataset {
    pub fn image(&self, id: ImageId) -> Option<&ImageRecord> {
        self.images.iter().find(|im| im.id == id)
    }

    pub fn image_ids(&self) -> BTreeSet<ImageId> {
        self.images.iter().map(|im| im.id).collect()
    }

    pub fn category_ids(&self) -> BTreeSet<CategoryId> {
        self.categories.iter().map(|c| c.id).collect()
    }

    /// Ground truth grouped by image; every image gets an entry.
    pub fn gt_by_image(&self) -> ImageGroups {
        let mut groups: ImageGroups = self.images.iter().map(|im| (im.id, Vec::new())).collect();
        for ann in &self.annotations {
            groups.entry(ann.image_id).or_default().push(ann.clone());
        }
        groups
    }

    /// Checks id resolution, dimensions and box/mask agreement.
    pub fn validate(&self) -> Result<()> {
        let mut dims = BTreeMap::new();
        for im in &self.images {
            if im.width == 0 || im.height == 0 {
                return Err(Error::Load(format!("image {} has zero size", im.id)));
            }
            if dims.insert(im.id, (im.height, im.width)).is_some() {
                return Err(Error::Load(format!("duplicate image id {}", im.id)));
            }
        }
        let mut cats = HashSet::new();
        for c in &self.categories {
            if !cats.insert(c.id) {
                return Err(Error::Load(format!("duplicate category id {}", c.id)));
            }
        }
        let mut ann_ids = HashSet::new();
        for ann in &self.annotations {
            if !ann_ids.insert(ann.id) {
                return Err(Error::Load(format!("duplicate annotation id {}", ann.id)));
            }
            let Some(&(h, w)) = dims.get(&ann.image_id) else {
                return Err(Error::Load(format!(
                    "annotation {} references unknown image {}",
                    ann.id, ann.image_id
                )));
            };
            if !cats.contains(&ann.category_id) {
                return Err(Error::Load(format!(
                    "annotation {} references unknown category {}",
                    ann.id, ann.category_id
                )));
            }
            if !ann.bbox.is_valid() {
                return Err(Error::Load(format!(
                    "annotation {} has an invalid bbox",
                    ann.id
                )));
            }
            if let Some(mask) = &ann.mask {
                if (mask.height(), mask.width()) != (h, w) {
                    return Err(Error::Load(format!(
                        "annotation {} mask is {}x{} but image {} is {h}x{w}",
                        ann.id,
                        mask.height(),
                        mask.width(),
                        ann.image_id
                    )));
                }
                if !mask.is_empty() && !boxes_agree(&mask.bbox(), &ann.bbox, 1.0) {
                    return Err(Error::Load(format!(
                        "annotation {} bbox {:?} disagrees with its mask extent {:?}",
                        ann.id,
                        ann.bbox.to_array(),
                        mask.bbox().to_array()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// True when every edge of `a` is within `tol` of the matching edge of `b`.
pub fn boxes_agree(a: &BBox, b: &BBox, tol: f64) -> bool {
    (a.x - b.x).abs() <= tol
        && (a.y - b.y).abs() <= tol
        && (a.right() - b.right()).abs() <= tol
        && (a.bottom() - b.bottom()).abs() <= tol
}
