//! Greedy multi-model fusion guided by a detector's pseudo ground truth.
//!
//! Images are visited in ascending id order. At step `i` every model's
//! predictions for image `i` are tried on top of the results accepted so
//! far, scored by box AP against the pseudo ground truth of images `1..=i`,
//! and the best model's predictions are appended. Predictions are copied
//! verbatim; geometry is never edited.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalAccumulator, EvalConfig};
use crate::types::{ImageGroups, ImageId, Instance, IouMode};

/// Two AP values closer than this are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Default confidence cut for turning controller detections into pseudo GT.
pub const DEFAULT_TAU: f64 = 0.5;

/// Controller detections kept as reference annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoGroundTruth {
    pub images: ImageGroups,
    pub threshold: f64,
}

impl PseudoGroundTruth {
    pub fn image_ids(&self) -> Vec<ImageId> {
        self.images.keys().copied().collect()
    }
}

/// Keeps controller detections with `score >= tau` and drops their scores.
/// Every input image keeps an entry, possibly empty.
pub fn filter_controller(controller: &ImageGroups, tau: f64) -> PseudoGroundTruth {
    debug_assert!((0.0..=1.0).contains(&tau));
    let images = controller
        .iter()
        .map(|(&img, dets)| {
            let kept = dets
                .iter()
                .filter(|d| d.score.is_some_and(|s| s >= tau))
                .map(|d| Instance {
                    score: None,
                    ..d.clone()
                })
                .collect();
            (img, kept)
        })
        .collect();
    PseudoGroundTruth {
        images,
        threshold: tau,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionTrace {
    /// Images in visiting order.
    pub image_ids: Vec<ImageId>,
    /// Zero-based index of the model chosen for each image.
    pub chosen_model: Vec<usize>,
    /// AP after each step, with "undefined" read as 0.
    pub prefix_ap: Vec<f64>,
    pub ap_evaluations: usize,
    /// AP of every candidate at every step, `[image][model]`.
    pub candidate_ap: Vec<Vec<f64>>,
}

fn check_inputs(
    ins: &[ImageGroups],
    pseudo: &PseudoGroundTruth,
    config: &EvalConfig,
) -> Result<()> {
    if ins.is_empty() {
        return Err(Error::Invalid("fusion needs at least one model".into()));
    }
    if config.mode != IouMode::Box {
        return Err(Error::Invalid(
            "fusion is guided by box AP; use box mode".into(),
        ));
    }
    config.validate()?;
    for (k, model) in ins.iter().enumerate() {
        for &img in pseudo.images.keys() {
            if !model.contains_key(&img) {
                return Err(Error::Invalid(format!(
                    "model {k} has no prediction list for image {img}"
                )));
            }
        }
        for det in model.values().flatten() {
            if !det.score.is_some_and(f64::is_finite) {
                return Err(Error::Invalid(format!(
                    "model {k}: prediction {} on image {} has a missing or non-finite score",
                    det.id, det.image_id
                )));
            }
        }
    }
    Ok(())
}

/// Index of the best value; ties within [`TIE_TOLERANCE`] go to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .position(|&v| v >= best - TIE_TOLERANCE)
        .unwrap_or(0)
}

/// Runs the greedy fusion. `ins[k]` holds model `k`'s grouped predictions.
pub fn fuse(
    ins: &[ImageGroups],
    pseudo: &PseudoGroundTruth,
    config: &EvalConfig,
) -> Result<(ImageGroups, FusionTrace)> {
    check_inputs(ins, pseudo, config)?;
    let mut acc = EvalAccumulator::new(config.clone())?;
    let mut fused = ImageGroups::new();
    let mut trace = FusionTrace {
        image_ids: Vec::with_capacity(pseudo.images.len()),
        chosen_model: Vec::with_capacity(pseudo.images.len()),
        prefix_ap: Vec::with_capacity(pseudo.images.len()),
        ap_evaluations: 0,
        candidate_ap: Vec::with_capacity(pseudo.images.len()),
    };

    for (&img, gts) in &pseudo.images {
        let candidates: Vec<f64> = ins
            .par_iter()
            .map(|model| {
                let mut waiting = acc.clone();
                waiting.add_image(img, gts, &model[&img])?;
                Ok(waiting.ap().ap_or_zero())
            })
            .collect::<Result<_>>()?;
        trace.ap_evaluations += candidates.len();

        let chosen = argmax_lowest(&candidates);
        let picked = &ins[chosen][&img];
        acc.add_image(img, gts, picked)?;
        acc.compact();
        log::debug!("image {img}: model {chosen} (AP {:.6})", candidates[chosen]);

        fused.insert(img, picked.clone());
        trace.image_ids.push(img);
        trace.chosen_model.push(chosen);
        trace.prefix_ap.push(candidates[chosen]);
        trace.candidate_ap.push(candidates);
    }
    Ok((fused, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Trace shape disagrees with the inputs.
    Shape { message: String },
    /// Another model scores strictly higher than the chosen one.
    Suboptimal {
        image_id: ImageId,
        chosen: usize,
        better: usize,
        chosen_ap: f64,
        better_ap: f64,
    },
    /// A lower-indexed model ties the chosen one.
    TieBreak {
        image_id: ImageId,
        chosen: usize,
        lower: usize,
    },
    /// Recorded prefix AP differs from the recomputed one.
    PrefixAp {
        image_id: ImageId,
        recorded: f64,
        recomputed: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VerificationReport {
    pub steps_checked: usize,
    pub evaluations: usize,
    pub violations: Vec<Violation>,
}

impl VerificationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Re-derives every greedy step with batch evaluation from scratch and
/// reports where the trace is not the lowest-index argmax.
pub fn fuse_trace_verify(
    ins: &[ImageGroups],
    pseudo: &PseudoGroundTruth,
    trace: &FusionTrace,
    config: &EvalConfig,
) -> VerificationReport {
    let mut report = VerificationReport::default();
    let images = pseudo.image_ids();
    let k_models = ins.len();
    if trace.chosen_model.len() != images.len() || trace.image_ids != images {
        report.violations.push(Violation::Shape {
            message: format!(
                "trace covers {} images, pseudo ground truth has {}",
                trace.chosen_model.len(),
                images.len()
            ),
        });
        return report;
    }
    if trace.ap_evaluations != images.len() * k_models {
        report.violations.push(Violation::Shape {
            message: format!(
                "ap_evaluations = {}, expected N*K = {}",
                trace.ap_evaluations,
                images.len() * k_models
            ),
        });
    }
    if let Some(&bad) = trace.chosen_model.iter().find(|&&k| k >= k_models) {
        report.violations.push(Violation::Shape {
            message: format!("chosen model {bad} out of range for K = {k_models}"),
        });
        return report;
    }

    let mut prefix_gt = ImageGroups::new();
    let mut res = ImageGroups::new();
    for (step, &img) in images.iter().enumerate() {
        prefix_gt.insert(img, pseudo.images[&img].clone());
        let mut aps = Vec::with_capacity(k_models);
        for model in ins {
            let mut waiting = res.clone();
            waiting.insert(img, model.get(&img).cloned().unwrap_or_default());
            let ap = evaluate(&prefix_gt, &waiting, config)
                .map(|r| r.ap_or_zero())
                .unwrap_or(f64::NAN);
            aps.push(ap);
        }
        report.evaluations += aps.len();
        let chosen = trace.chosen_model[step];
        let best = aps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let chosen_ap = aps[chosen];
        if chosen_ap.is_nan() || chosen_ap < best - TIE_TOLERANCE {
            let better = aps.iter().position(|&v| v == best).unwrap_or(0);
            report.violations.push(Violation::Suboptimal {
                image_id: img,
                chosen,
                better,
                chosen_ap,
                better_ap: best,
            });
        } else if let Some(lower) = aps[..chosen]
            .iter()
            .position(|&v| v >= chosen_ap - TIE_TOLERANCE)
        {
            report.violations.push(Violation::TieBreak {
                image_id: img,
                chosen,
                lower,
            });
        }
        if let Some(&recorded) = trace.prefix_ap.get(step) {
            if (recorded - chosen_ap).abs() > 1e-9 {
                report.violations.push(Violation::PrefixAp {
                    image_id: img,
                    recorded,
                    recomputed: chosen_ap,
                });
            }
        }
        res.insert(img, ins[chosen].get(&img).cloned().unwrap_or_default());
        report.steps_checked += 1;
    }
    report
}
