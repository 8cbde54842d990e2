use crate::error::{Error, Result};
use crate::types::{Instance, IouMode};

/// Outcome of greedy matching at one IoU threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchOutcome {
    /// For each detection, the index of the ground truth it matched.
    pub det_matches: Vec<Option<usize>>,
    /// For each ground truth, whether some detection claimed it.
    pub gt_matched: Vec<bool>,
}

impl MatchOutcome {
    pub fn tp_flags(&self) -> Vec<bool> {
        self.det_matches.iter().map(Option::is_some).collect()
    }

    pub fn false_negatives(&self) -> usize {
        self.gt_matched.iter().filter(|m| !**m).count()
    }
}

pub(crate) fn ensure_sorted(dets: &[Instance]) -> Result<()> {
    for (i, pair) in dets.windows(2).enumerate() {
        if pair[0].score_or_zero() < pair[1].score_or_zero() {
            return Err(Error::Contract(format!(
                "detections must be sorted by descending score (position {} has {} < {})",
                i,
                pair[0].score_or_zero(),
                pair[1].score_or_zero()
            )));
        }
    }
    Ok(())
}

pub(crate) fn iou_matrix(
    dets: &[Instance],
    gts: &[Instance],
    mode: IouMode,
) -> Result<Vec<Vec<f64>>> {
    dets.iter()
        .map(|d| gts.iter().map(|g| d.iou(g, mode)).collect())
        .collect()
}

/// Greedy matching on a precomputed IoU matrix (`ious[det][gt]`).
///
/// Each detection, in order, takes the unclaimed ground truth with the
/// highest IoU if that IoU reaches `threshold`; ties go to the lower index.
pub(crate) fn greedy_match(ious: &[Vec<f64>], n_gt: usize, threshold: f64) -> MatchOutcome {
    let mut gt_matched = vec![false; n_gt];
    let det_matches = ious
        .iter()
        .map(|row| {
            let mut best: Option<(usize, f64)> = None;
            for (g, &iou) in row.iter().enumerate() {
                if gt_matched[g] || iou < threshold {
                    continue;
                }
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            best.map(|(g, _)| {
                gt_matched[g] = true;
                g
            })
        })
        .collect();
    MatchOutcome {
        det_matches,
        gt_matched,
    }
}

/// Matches score-sorted detections of one image and category against its
/// ground truths.
pub fn match_detections(
    dets: &[Instance],
    gts: &[Instance],
    iou_threshold: f64,
    mode: IouMode,
) -> Result<MatchOutcome> {
    ensure_sorted(dets)?;
    let ious = iou_matrix(dets, gts, mode)?;
    Ok(greedy_match(&ious, gts.len(), iou_threshold))
}

/// Evenly spaced recall sample points in `[0, 1]`.
pub fn recall_grid(points: usize) -> Vec<f64> {
    let step = 1.0 / (points - 1) as f64;
    let mut grid: Vec<f64> = (0..points).map(|j| j as f64 * step).collect();
    if let Some(last) = grid.last_mut() {
        *last = 1.0;
    }
    grid
}

/// Interpolated AP of a ranked TP/FP sequence against `n_gt` ground truths.
/// Expects `n_gt > 0`.
pub(crate) fn interpolated_ap(flags: impl Iterator<Item = bool>, n_gt: usize, grid: &[f64]) -> f64 {
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for hit in flags {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        if precision[i] < precision[i + 1] {
            precision[i] = precision[i + 1];
        }
    }
    let total: f64 = grid
        .iter()
        .map(|&r| {
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    total / grid.len() as f64
}

/// AP of TP/FP flags already sorted by descending score, with precision
/// interpolated as the maximum precision at any recall at or above each of
/// `recall_points` evenly spaced recalls. `None` when there is no ground truth.
pub fn average_precision(flags: &[bool], n_gt: usize, recall_points: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    Some(interpolated_ap(
        flags.iter().copied(),
        n_gt,
        &recall_grid(recall_points.max(2)),
    ))
}
