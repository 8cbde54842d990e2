use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::types::{CategoryId, ImageId, Instance};

use super::{
    category_aps, evaluate_image, recall_grid, ApReport, EvalConfig, ImageEval, MatchRecord,
};

#[derive(Debug, Clone, Default)]
struct CategoryState {
    n_gt: usize,
    records: Vec<MatchRecord>,
    /// Per-threshold AP; only meaningful while `n_gt > 0`.
    cached: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Committed {
    config: EvalConfig,
    grid: Vec<f64>,
    images: BTreeSet<ImageId>,
    categories: BTreeMap<CategoryId, CategoryState>,
}

/// Incremental AP over a growing set of images.
///
/// State is a shared committed prefix plus a small list of pending images,
/// so `clone` is an `Arc` bump and a copy of the pending list. Clones never
/// observe each other's additions. [`EvalAccumulator::compact`] folds the
/// pending images into the prefix.
#[derive(Debug, Clone)]
pub struct EvalAccumulator {
    base: Arc<Committed>,
    pending: Vec<ImageEval>,
}

impl EvalAccumulator {
    pub fn new(config: EvalConfig) -> Result<Self> {
        config.validate()?;
        let grid = recall_grid(config.recall_points);
        Ok(Self {
            base: Arc::new(Committed {
                config,
                grid,
                images: BTreeSet::new(),
                categories: BTreeMap::new(),
            }),
            pending: Vec::new(),
        })
    }

    pub fn config(&self) -> &EvalConfig {
        &self.base.config
    }

    pub fn contains(&self, image_id: ImageId) -> bool {
        self.base.images.contains(&image_id) || self.pending.iter().any(|p| p.image_id == image_id)
    }

    pub fn image_count(&self) -> usize {
        self.base.images.len() + self.pending.len()
    }

    /// Number of ranked detection records held, committed and pending.
    pub fn record_count(&self) -> usize {
        let base: usize = self.base.categories.values().map(|c| c.records.len()).sum();
        let pending: usize = self
            .pending
            .iter()
            .flat_map(|p| p.categories.values())
            .map(|c| c.records.len())
            .sum();
        base + pending
    }

    pub fn add_image(
        &mut self,
        image_id: ImageId,
        gts: &[Instance],
        dets: &[Instance],
    ) -> Result<()> {
        if self.contains(image_id) {
            return Err(Error::Invalid(format!(
                "image {image_id} already added to accumulator"
            )));
        }
        let eval = evaluate_image(image_id, gts, dets, &self.base.config)?;
        self.pending.push(eval);
        Ok(())
    }

    /// Folds pending images into the shared prefix. Copies the prefix only
    /// if another clone still holds it.
    pub fn compact(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let pending = std::mem::take(&mut self.pending);
        let base = Arc::make_mut(&mut self.base);
        let mut touched = BTreeSet::new();
        for eval in pending {
            base.images.insert(eval.image_id);
            for (cat, m) in eval.categories {
                touched.insert(cat);
                let state = base.categories.entry(cat).or_default();
                state.n_gt += m.n_gt;
                if !m.records.is_empty() {
                    let old = std::mem::take(&mut state.records);
                    state.records = merge_sorted(&old, &m.records.iter().collect::<Vec<_>>())
                        .into_iter()
                        .copied()
                        .collect();
                }
            }
        }
        for cat in touched {
            let state = base.categories.get_mut(&cat).expect("touched category");
            state.cached = if state.n_gt > 0 {
                category_aps(state.records.iter(), state.n_gt, &base.config, &base.grid)
            } else {
                Vec::new()
            };
        }
    }

    /// Report over every image added so far; equal to batch `evaluate`
    /// over the same images.
    pub fn ap(&self) -> ApReport {
        let base = &*self.base;
        let mut delta: BTreeMap<CategoryId, (usize, Vec<&MatchRecord>)> = BTreeMap::new();
        for eval in &self.pending {
            for (&cat, m) in &eval.categories {
                let entry = delta.entry(cat).or_default();
                entry.0 += m.n_gt;
                entry.1.extend(m.records.iter());
            }
        }
        let mut table = BTreeMap::new();
        for (&cat, state) in &base.categories {
            if !delta.contains_key(&cat) && state.n_gt > 0 {
                table.insert(cat, state.cached.clone());
            }
        }
        for (cat, (extra_gt, mut extra)) in delta {
            let empty = CategoryState::default();
            let state = base.categories.get(&cat).unwrap_or(&empty);
            let n_gt = state.n_gt + extra_gt;
            if n_gt == 0 {
                continue;
            }
            extra.sort_by(|a, b| a.rank_cmp(b));
            let merged = merge_sorted(&state.records, &extra);
            table.insert(
                cat,
                category_aps(merged.iter().copied(), n_gt, &base.config, &base.grid),
            );
        }
        ApReport::from_table(&table, &base.config)
    }
}

fn merge_sorted<'a>(a: &'a [MatchRecord], b: &[&'a MatchRecord]) -> Vec<&'a MatchRecord> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if b[j].rank_cmp(&a[i]).is_lt() {
            out.push(b[j]);
            j += 1;
        } else {
            out.push(&a[i]);
            i += 1;
        }
    }
    out.extend(a[i..].iter());
    out.extend(b[j..].iter().copied());
    out
}
