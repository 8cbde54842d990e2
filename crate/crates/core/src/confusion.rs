//! Category confusion from matched prediction/ground-truth pairs, and the
//! strongly confused pairs that drive partner selection in mixup.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CategoryId, Dataset, ImageGroups, IouMode};

/// IoU a prediction must exceed to count against a ground truth.
pub const DEFAULT_ALPHA: f64 = 0.5;
/// Normalized confusion a category pair must exceed to be guided.
pub const DEFAULT_BETA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionConfig {
    pub alpha: f64,
    pub beta: f64,
    pub matching_mode: IouMode,
}

impl Default for ConfusionConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            matching_mode: IouMode::Box,
        }
    }
}

impl ConfusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Invalid(format!(
                "alpha must be in (0,1), got {}",
                self.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Invalid(format!(
                "beta must be in [0,1), got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Row-normalized confusion, indexed `[gt category][predicted category]`
/// in the order of `categories`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub categories: Vec<CategoryId>,
    pub matrix: Vec<Vec<f64>>,
    /// Row sums before normalization.
    pub row_totals: Vec<f64>,
}

impl ConfusionMatrix {
    pub fn index_of(&self, category: CategoryId) -> Option<usize> {
        self.categories.binary_search(&category).ok()
    }

    /// Entry for a (gt, predicted) category pair; zero for unknown ids.
    pub fn get(&self, gt: CategoryId, predicted: CategoryId) -> f64 {
        match (self.index_of(gt), self.index_of(predicted)) {
            (Some(i), Some(j)) => self.matrix[i][j],
            _ => 0.0,
        }
    }
}

/// Accumulates `score` into `[gt][pred]` for every ground truth a
/// prediction overlaps with IoU above `alpha`, then normalizes each row.
pub fn build_confusion(
    dataset: &Dataset,
    preds: &ImageGroups,
    config: &ConfusionConfig,
) -> Result<ConfusionMatrix> {
    config.validate()?;
    let categories: Vec<CategoryId> = dataset.category_ids().into_iter().collect();
    let n = categories.len();
    let index = |c: CategoryId| {
        categories
            .binary_search(&c)
            .map_err(|_| Error::Invalid(format!("unknown category {c}")))
    };
    let mut raw = vec![vec![0.0; n]; n];
    let gts = dataset.gt_by_image();
    for (&img, image_preds) in preds {
        if image_preds.is_empty() {
            continue;
        }
        let Some(image_gts) = gts.get(&img) else {
            return Err(Error::Invalid(format!(
                "predictions reference unknown image {img}"
            )));
        };
        for p in image_preds {
            let score = p.score.ok_or_else(|| {
                Error::Invalid(format!("prediction {} on image {img} has no score", p.id))
            })?;
            let j = index(p.category_id)?;
            for g in image_gts {
                if p.iou(g, config.matching_mode)? > config.alpha {
                    raw[index(g.category_id)?][j] += score;
                }
            }
        }
    }
    let row_totals: Vec<f64> = raw.iter().map(|row| row.iter().sum()).collect();
    let matrix = raw
        .into_iter()
        .zip(&row_totals)
        .map(|(row, &total)| {
            if total > 0.0 {
                row.into_iter().map(|v| v / total).collect()
            } else {
                row
            }
        })
        .collect();
    Ok(ConfusionMatrix {
        categories,
        matrix,
        row_totals,
    })
}

/// Ordered category pairs `(i, j)`, `i != j`, with `C[i][j] > beta`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GuidedPairs {
    pub pairs: BTreeSet<(CategoryId, CategoryId)>,
}

impl GuidedPairs {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn contains(&self, i: CategoryId, j: CategoryId) -> bool {
        self.pairs.contains(&(i, j))
    }

    /// Confused partners `j` of category `i`.
    pub fn partners_of(&self, i: CategoryId) -> impl Iterator<Item = CategoryId> + '_ {
        self.pairs
            .range((i, 0)..=(i, CategoryId::MAX))
            .map(|&(_, j)| j)
    }
}

impl FromIterator<(CategoryId, CategoryId)> for GuidedPairs {
    fn from_iter<T: IntoIterator<Item = (CategoryId, CategoryId)>>(iter: T) -> Self {
        Self {
            pairs: iter.into_iter().collect(),
        }
    }
}

pub fn guided_pairs(c: &ConfusionMatrix, beta: f64) -> GuidedPairs {
    let mut pairs = BTreeSet::new();
    for (i, row) in c.matrix.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if i != j && v > beta {
                pairs.insert((c.categories[i], c.categories[j]));
            }
        }
    }
    GuidedPairs { pairs }
}
