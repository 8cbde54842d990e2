//! COCO-style JSON interchange: dataset files and per-model result files.
//!
//! Only the uncompressed RLE form (`counts` as an integer array) is read or
//! written. Polygon segmentations are rasterized at load time. Group
//! annotations (`iscrowd: 1`) are rejected.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::mask::{rasterize_polygons, SegMask};
use crate::types::{Category, Dataset, ImageGroups, ImageRecord, Instance};

/// Rounds to the 6 decimal places used in every emitted file.
pub fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

#[derive(Deserialize)]
struct RawDataset {
    images: Option<Vec<ImageRecord>>,
    annotations: Option<Vec<RawAnnotation>>,
    categories: Option<Vec<Category>>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    #[serde(default)]
    area: Option<f64>,
    #[serde(default)]
    segmentation: Option<Value>,
    #[serde(default)]
    iscrowd: Option<u8>,
}

#[derive(Deserialize)]
struct RawResult {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    score: f64,
    #[serde(default)]
    segmentation: Option<Value>,
}

#[derive(Serialize)]
struct RleOut<'a> {
    size: [u32; 2],
    counts: &'a [u32],
}

#[derive(Serialize)]
struct AnnotationOut<'a> {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    area: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    segmentation: Option<RleOut<'a>>,
    iscrowd: u8,
}

#[derive(Serialize)]
struct DatasetOut<'a> {
    images: &'a [ImageRecord],
    annotations: Vec<AnnotationOut<'a>>,
    categories: &'a [Category],
}

#[derive(Serialize)]
struct ResultOut<'a> {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    segmentation: Option<RleOut<'a>>,
}

fn rounded_box(b: &BBox) -> [f64; 4] {
    b.to_array().map(round6)
}

fn rle_out(mask: &Option<SegMask>) -> Option<RleOut<'_>> {
    mask.as_ref().map(|m| RleOut {
        size: [m.height(), m.width()],
        counts: m.counts(),
    })
}

/// Parses a `segmentation` value: RLE object or polygon list.
fn parse_segmentation(value: &Value, height: u32, width: u32, what: &str) -> Result<SegMask> {
    match value {
        Value::Object(obj) => {
            let size: [u32; 2] = obj
                .get("size")
                .cloned()
                .and_then(|v| serde_json::from_value(v).ok())
                .ok_or_else(|| Error::Load(format!("{what}: RLE lacks a valid size")))?;
            if size != [height, width] {
                return Err(Error::Load(format!(
                    "{what}: RLE size {size:?} does not match image {height}x{width}"
                )));
            }
            let counts = match obj.get("counts") {
                Some(Value::Array(_)) => serde_json::from_value::<Vec<u32>>(obj["counts"].clone())
                    .map_err(|e| {
                        Error::Load(format!(
                            "{what}: RLE counts are not non-negative integers: {e}"
                        ))
                    })?,
                Some(Value::String(_)) => {
                    return Err(Error::Load(format!(
                        "{what}: compressed string RLE is not supported"
                    )))
                }
                _ => return Err(Error::Load(format!("{what}: RLE lacks counts"))),
            };
            SegMask::from_counts(size[0], size[1], counts)
                .map_err(|e| Error::Load(format!("{what}: {e}")))
        }
        Value::Array(_) => {
            let polys: Vec<Vec<f64>> = serde_json::from_value(value.clone())
                .map_err(|e| Error::Load(format!("{what}: bad polygon list: {e}")))?;
            rasterize_polygons(&polys, height, width)
                .map_err(|e| Error::Load(format!("{what}: {e}")))
        }
        _ => Err(Error::Load(format!(
            "{what}: unsupported segmentation form"
        ))),
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    dataset_from_value(read_json(path.as_ref())?)
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Load(e.to_string()))?;
    dataset_from_value(value)
}

pub fn dataset_from_value(value: Value) -> Result<Dataset> {
    let raw: RawDataset = serde_json::from_value(value)
        .map_err(|e| Error::Load(format!("bad dataset layout: {e}")))?;
    let mut images = raw
        .images
        .ok_or_else(|| Error::Load("missing images section".into()))?;
    let raw_anns = raw
        .annotations
        .ok_or_else(|| Error::Load("missing annotations section".into()))?;
    let mut categories = raw
        .categories
        .ok_or_else(|| Error::Load("missing categories section".into()))?;
    images.sort_by_key(|im| im.id);
    categories.sort_by_key(|c| c.id);

    let mut annotations = Vec::with_capacity(raw_anns.len());
    for ann in raw_anns {
        let what = format!("annotation {}", ann.id);
        if ann.iscrowd.unwrap_or(0) != 0 {
            return Err(Error::Load(format!(
                "{what}: iscrowd group annotations are not supported"
            )));
        }
        let image = images
            .binary_search_by_key(&ann.image_id, |im| im.id)
            .map(|i| &images[i])
            .map_err(|_| {
                Error::Load(format!("{what} references unknown image {}", ann.image_id))
            })?;
        let mask = ann
            .segmentation
            .as_ref()
            .map(|seg| parse_segmentation(seg, image.height, image.width, &what))
            .transpose()?;
        let bbox = BBox::from(ann.bbox);
        let area = match (&mask, ann.area) {
            (_, Some(a)) => a,
            (Some(m), None) => m.area() as f64,
            (None, None) => bbox.area(),
        };
        annotations.push(Instance {
            id: ann.id,
            image_id: ann.image_id,
            category_id: ann.category_id,
            bbox,
            mask,
            area,
            score: None,
        });
    }
    annotations.sort_by_key(|a| a.id);
    let dataset = Dataset {
        images,
        annotations,
        categories,
    };
    dataset.validate()?;
    Ok(dataset)
}

pub fn dataset_to_string(dataset: &Dataset) -> String {
    let out = DatasetOut {
        images: &dataset.images,
        annotations: dataset
            .annotations
            .iter()
            .map(|a| AnnotationOut {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: rounded_box(&a.bbox),
                area: round6(a.area),
                segmentation: rle_out(&a.mask),
                iscrowd: 0,
            })
            .collect(),
        categories: &dataset.categories,
    };
    serde_json::to_string(&out).expect("dataset serialization is infallible")
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &dataset_to_string(dataset))
}

/// Canonical order within one image: score descending, then content.
fn canonical_cmp(a: &Instance, b: &Instance) -> Ordering {
    b.score_or_zero()
        .total_cmp(&a.score_or_zero())
        .then(a.category_id.cmp(&b.category_id))
        .then_with(|| {
            a.bbox
                .to_array()
                .iter()
                .zip(b.bbox.to_array().iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| {
            let ka = a.mask.as_ref().map(|m| m.counts());
            let kb = b.mask.as_ref().map(|m| m.counts());
            ka.cmp(&kb)
        })
}

pub fn load_results(path: impl AsRef<Path>, dataset: &Dataset) -> Result<ImageGroups> {
    results_from_value(read_json(path.as_ref())?, dataset)
}

pub fn parse_results(text: &str, dataset: &Dataset) -> Result<ImageGroups> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Load(e.to_string()))?;
    results_from_value(value, dataset)
}

/// Groups a result array by image, sorted by descending score.
///
/// Every dataset image gets a (possibly empty) entry. Prediction ids are
/// assigned from 1 in canonical order, so permuting the input array does not
/// change the result.
pub fn results_from_value(value: Value, dataset: &Dataset) -> Result<ImageGroups> {
    let raw: Vec<RawResult> = serde_json::from_value(value)
        .map_err(|e| Error::Load(format!("bad results layout: {e}")))?;
    let categories = dataset.category_ids();
    let mut groups: ImageGroups = dataset
        .images
        .iter()
        .map(|im| (im.id, Vec::new()))
        .collect();
    for (idx, r) in raw.into_iter().enumerate() {
        let what = format!("result entry {idx} (image {})", r.image_id);
        let Some(image) = dataset.image(r.image_id) else {
            return Err(Error::Load(format!(
                "{what} references unknown image {}",
                r.image_id
            )));
        };
        if !categories.contains(&r.category_id) {
            return Err(Error::Load(format!(
                "{what} references unknown category {}",
                r.category_id
            )));
        }
        if !r.score.is_finite() || !(0.0..=1.0).contains(&r.score) {
            return Err(Error::Load(format!(
                "{what} has score {} outside [0,1]",
                r.score
            )));
        }
        let bbox = BBox::from(r.bbox);
        if !bbox.is_valid() {
            return Err(Error::Load(format!("{what} has an invalid bbox")));
        }
        let mask = r
            .segmentation
            .as_ref()
            .map(|seg| parse_segmentation(seg, image.height, image.width, &what))
            .transpose()?;
        let area = mask.as_ref().map_or(bbox.area(), |m| m.area() as f64);
        groups
            .get_mut(&r.image_id)
            .expect("image entry")
            .push(Instance {
                id: 0,
                image_id: r.image_id,
                category_id: r.category_id,
                bbox,
                mask,
                area,
                score: Some(r.score),
            });
    }
    let mut next_id = 1;
    for list in groups.values_mut() {
        list.sort_by(canonical_cmp);
        for inst in list.iter_mut() {
            inst.id = next_id;
            next_id += 1;
        }
    }
    Ok(groups)
}

/// Serializes predictions as a COCO results array, images ascending.
pub fn results_to_string(predictions: &ImageGroups) -> String {
    let entries: Vec<ResultOut> = predictions
        .values()
        .flatten()
        .map(|p| ResultOut {
            image_id: p.image_id,
            category_id: p.category_id,
            bbox: rounded_box(&p.bbox),
            score: round6(p.score_or_zero()),
            segmentation: rle_out(&p.mask),
        })
        .collect();
    serde_json::to_string(&entries).expect("results serialization is infallible")
}

pub fn write_results(predictions: &ImageGroups, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &results_to_string(predictions))
}
