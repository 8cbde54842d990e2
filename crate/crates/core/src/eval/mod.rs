//! COCO-protocol average precision for box and mask predictions.
//!
//! [`evaluate`] is the batch entry point. [`EvalAccumulator`] produces the
//! same report incrementally, one image at a time, and is what the fusion
//! loop uses.
//!
//! Ranking is deterministic: detections are ordered by descending score,
//! ties broken by ascending image id and then by position in the image's
//! own score-sorted list.

mod accumulator;
mod matching;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{sort_by_score_desc, CategoryId, ImageGroups, ImageId, Instance, IouMode};

pub use accumulator::EvalAccumulator;
pub(crate) use matching::interpolated_ap;
pub use matching::{average_precision, match_detections, recall_grid, MatchOutcome};

/// Upper bound on IoU thresholds; match flags are stored as a bitmask.
pub const MAX_THRESHOLDS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub recall_points: usize,
    pub max_dets_per_image: usize,
    pub mode: IouMode,
    /// When false, categories are ignored during matching and a single
    /// pooled category (id 0) is reported.
    pub class_aware: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: (0..10).map(|i| 0.5 + 0.05 * i as f64).collect(),
            recall_points: 101,
            max_dets_per_image: 100,
            mode: IouMode::Box,
            class_aware: true,
        }
    }
}

impl EvalConfig {
    pub fn with_mode(mode: IouMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.iou_thresholds;
        if t.is_empty() || t.len() > MAX_THRESHOLDS {
            return Err(Error::Invalid(format!(
                "need between 1 and {MAX_THRESHOLDS} IoU thresholds, got {}",
                t.len()
            )));
        }
        if t.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::Invalid("IoU thresholds must lie in (0, 1]".into()));
        }
        if t.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid(
                "IoU thresholds must be strictly increasing".into(),
            ));
        }
        if self.recall_points < 2 {
            return Err(Error::Invalid("recall_points must be at least 2".into()));
        }
        if self.max_dets_per_image == 0 {
            return Err(Error::Invalid("max_dets_per_image must be positive".into()));
        }
        Ok(())
    }

    fn threshold_index(&self, t: f64) -> Option<usize> {
        self.iou_thresholds
            .iter()
            .position(|&v| (v - t).abs() < 1e-9)
    }

    fn category_key(&self, category: CategoryId) -> CategoryId {
        if self.class_aware {
            category
        } else {
            0
        }
    }
}

/// AP summary. `None` marks "undefined": no ground truth to score against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    /// AP averaged over IoU thresholds, for every category with ground truth.
    pub per_category: BTreeMap<CategoryId, f64>,
}

impl ApReport {
    pub fn undefined() -> Self {
        Self {
            ap: None,
            ap50: None,
            ap75: None,
            per_category: BTreeMap::new(),
        }
    }

    /// Builds the report from per-category, per-threshold AP values.
    /// Categories without ground truth must already be excluded.
    pub(crate) fn from_table(table: &BTreeMap<CategoryId, Vec<f64>>, config: &EvalConfig) -> Self {
        if table.is_empty() {
            return Self::undefined();
        }
        let n = table.len() as f64;
        let per_category: BTreeMap<CategoryId, f64> = table
            .iter()
            .map(|(&c, aps)| (c, aps.iter().sum::<f64>() / aps.len() as f64))
            .collect();
        let at = |t: f64| {
            config
                .threshold_index(t)
                .map(|i| table.values().map(|aps| aps[i]).sum::<f64>() / n)
        };
        Self {
            ap: Some(per_category.values().sum::<f64>() / n),
            ap50: at(0.5),
            ap75: at(0.75),
            per_category,
        }
    }

    /// AP with "undefined" read as zero.
    pub fn ap_or_zero(&self) -> f64 {
        self.ap.unwrap_or(0.0)
    }
}

/// One ranked detection after matching, with a TP bit per IoU threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct MatchRecord {
    pub score: f64,
    pub image_id: ImageId,
    pub rank: u32,
    pub matched: u64,
}

impl MatchRecord {
    pub(crate) fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.image_id.cmp(&other.image_id))
            .then(self.rank.cmp(&other.rank))
    }

    #[inline]
    pub(crate) fn hit(&self, threshold: usize) -> bool {
        self.matched >> threshold & 1 == 1
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct CategoryMatches {
    pub n_gt: usize,
    /// Sorted by [`MatchRecord::rank_cmp`].
    pub records: Vec<MatchRecord>,
}

/// Matching results for one image, split by category key.
#[derive(Debug, Clone)]
pub(crate) struct ImageEval {
    pub image_id: ImageId,
    pub categories: BTreeMap<CategoryId, CategoryMatches>,
}

fn check_scores(dets: &[Instance]) -> Result<()> {
    for d in dets {
        match d.score {
            Some(s) if s.is_finite() => {}
            Some(s) => {
                return Err(Error::Invalid(format!(
                    "detection {} on image {} has non-finite score {s}",
                    d.id, d.image_id
                )))
            }
            None => {
                return Err(Error::Invalid(format!(
                    "detection {} on image {} has no score",
                    d.id, d.image_id
                )))
            }
        }
    }
    Ok(())
}

/// Matches one image's detections against its ground truth at every
/// configured threshold.
pub(crate) fn evaluate_image(
    image_id: ImageId,
    gts: &[Instance],
    dets: &[Instance],
    config: &EvalConfig,
) -> Result<ImageEval> {
    check_scores(dets)?;
    let mut ranked = dets.to_vec();
    sort_by_score_desc(&mut ranked);
    ranked.truncate(config.max_dets_per_image);

    let mut gt_by_cat: BTreeMap<CategoryId, Vec<&Instance>> = BTreeMap::new();
    for g in gts {
        gt_by_cat
            .entry(config.category_key(g.category_id))
            .or_default()
            .push(g);
    }
    let mut det_by_cat: BTreeMap<CategoryId, Vec<(u32, &Instance)>> = BTreeMap::new();
    for (rank, d) in ranked.iter().enumerate() {
        det_by_cat
            .entry(config.category_key(d.category_id))
            .or_default()
            .push((rank as u32, d));
    }

    let mut categories = BTreeMap::new();
    let keys: std::collections::BTreeSet<CategoryId> =
        gt_by_cat.keys().chain(det_by_cat.keys()).copied().collect();
    for cat in keys {
        let cat_gts = gt_by_cat.get(&cat).map(Vec::as_slice).unwrap_or(&[]);
        let cat_dets = det_by_cat.get(&cat).map(Vec::as_slice).unwrap_or(&[]);
        let ious: Vec<Vec<f64>> = cat_dets
            .iter()
            .map(|(_, d)| cat_gts.iter().map(|g| d.iou(g, config.mode)).collect())
            .collect::<Result<_>>()?;
        let mut bits = vec![0u64; cat_dets.len()];
        for (t, &thr) in config.iou_thresholds.iter().enumerate() {
            let outcome = matching::greedy_match(&ious, cat_gts.len(), thr);
            for (b, m) in bits.iter_mut().zip(&outcome.det_matches) {
                if m.is_some() {
                    *b |= 1 << t;
                }
            }
        }
        let records = cat_dets
            .iter()
            .zip(bits)
            .map(|((rank, d), matched)| MatchRecord {
                score: d.score_or_zero(),
                image_id,
                rank: *rank,
                matched,
            })
            .collect();
        categories.insert(
            cat,
            CategoryMatches {
                n_gt: cat_gts.len(),
                records,
            },
        );
    }
    Ok(ImageEval {
        image_id,
        categories,
    })
}

/// Per-threshold AP for one category's ranked records.
pub(crate) fn category_aps<'a>(
    records: impl Iterator<Item = &'a MatchRecord> + Clone,
    n_gt: usize,
    config: &EvalConfig,
    grid: &[f64],
) -> Vec<f64> {
    (0..config.iou_thresholds.len())
        .map(|t| interpolated_ap(records.clone().map(|r| r.hit(t)), n_gt, grid))
        .collect()
}

/// Batch AP of `dets` against `gts` over every image keyed in `gts`.
///
/// Detections on images absent from `gts` are rejected.
pub fn evaluate(gts: &ImageGroups, dets: &ImageGroups, config: &EvalConfig) -> Result<ApReport> {
    config.validate()?;
    if let Some((&img, _)) = dets
        .iter()
        .find(|(id, list)| !list.is_empty() && !gts.contains_key(id))
    {
        return Err(Error::Invalid(format!(
            "detections reference image {img}, which has no ground-truth entry"
        )));
    }
    let mut pooled: BTreeMap<CategoryId, CategoryMatches> = BTreeMap::new();
    for (&image_id, image_gts) in gts {
        let image_dets = dets.get(&image_id).map(Vec::as_slice).unwrap_or(&[]);
        let eval = evaluate_image(image_id, image_gts, image_dets, config)?;
        for (cat, m) in eval.categories {
            let entry = pooled.entry(cat).or_default();
            entry.n_gt += m.n_gt;
            entry.records.extend(m.records);
        }
    }
    let grid = recall_grid(config.recall_points);
    let mut table = BTreeMap::new();
    for (cat, mut m) in pooled {
        if m.n_gt == 0 {
            continue;
        }
        m.records.sort_by(MatchRecord::rank_cmp);
        table.insert(cat, category_aps(m.records.iter(), m.n_gt, config, &grid));
    }
    Ok(ApReport::from_table(&table, config))
}
