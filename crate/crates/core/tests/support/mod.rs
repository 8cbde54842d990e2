//! Test-only oracles and random case generators.
//!
//! The reference evaluator here is written from the AP definition directly:
//! no incremental state, no suffix-max precision pass, no binary search.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segfuse_core::fusion::{filter_controller, PseudoGroundTruth};
use segfuse_core::mask::Bitmask;
use segfuse_core::{BBox, ImageGroups, Instance};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Continuous-area IoU written out independently.
pub fn naive_box_iou(a: &BBox, b: &BBox) -> f64 {
    let ix0 = if a.x > b.x { a.x } else { b.x };
    let iy0 = if a.y > b.y { a.y } else { b.y };
    let ix1 = if a.x + a.w < b.x + b.w {
        a.x + a.w
    } else {
        b.x + b.w
    };
    let iy1 = if a.y + a.h < b.y + b.h {
        a.y + a.h
    } else {
        b.y + b.h
    };
    let inter = if ix1 > ix0 && iy1 > iy0 {
        (ix1 - ix0) * (iy1 - iy0)
    } else {
        0.0
    };
    let union = a.w * a.h + b.w * b.h - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefReport {
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
}

/// Interpolated AP straight from the definition: at each recall sample r,
/// take the maximum precision over all ranks whose recall is >= r.
pub fn naive_ap(flags: &[bool], n_gt: usize, recall_points: usize) -> f64 {
    let mut precisions = Vec::new();
    let mut recalls = Vec::new();
    let mut tp = 0.0;
    for (k, &hit) in flags.iter().enumerate() {
        if hit {
            tp += 1.0;
        }
        precisions.push(tp / (k as f64 + 1.0));
        recalls.push(tp / n_gt as f64);
    }
    let mut sum = 0.0;
    for j in 0..recall_points {
        let r = if j == recall_points - 1 {
            1.0
        } else {
            j as f64 * (1.0 / (recall_points - 1) as f64)
        };
        let mut best = 0.0;
        for k in 0..flags.len() {
            if recalls[k] >= r && precisions[k] > best {
                best = precisions[k];
            }
        }
        sum += best;
    }
    sum / recall_points as f64
}

/// Class-aware box-mode COCO AP over the images keyed in `gts`.
pub fn reference_evaluate(
    gts: &ImageGroups,
    dets: &ImageGroups,
    thresholds: &[f64],
    recall_points: usize,
    max_dets: usize,
) -> RefReport {
    let mut categories: Vec<u64> = gts.values().flatten().map(|g| g.category_id).collect();
    categories.sort();
    categories.dedup();
    if categories.is_empty() {
        return RefReport {
            ap: None,
            ap50: None,
            ap75: None,
        };
    }
    // per category, per threshold AP
    let mut table: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for &cat in &categories {
        let mut row = Vec::new();
        for &t in thresholds {
            // (score, image, rank, tp)
            let mut ranked: Vec<(f64, u64, usize, bool)> = Vec::new();
            let mut n_gt = 0;
            for (&img, image_gts) in gts {
                let mut image_dets: Vec<&Instance> = dets
                    .get(&img)
                    .map(|v| v.iter().collect())
                    .unwrap_or_default();
                // stable sort by score, then cap
                image_dets.sort_by(|a, b| b.score.unwrap().partial_cmp(&a.score.unwrap()).unwrap());
                image_dets.truncate(max_dets);
                let cat_gts: Vec<&Instance> =
                    image_gts.iter().filter(|g| g.category_id == cat).collect();
                n_gt += cat_gts.len();
                let mut taken = vec![false; cat_gts.len()];
                for (rank, d) in image_dets.iter().enumerate() {
                    if d.category_id != cat {
                        continue;
                    }
                    let mut best = None;
                    let mut best_iou = -1.0;
                    for (gi, g) in cat_gts.iter().enumerate() {
                        let iou = naive_box_iou(&d.bbox, &g.bbox);
                        if !taken[gi] && iou >= t && iou > best_iou {
                            best = Some(gi);
                            best_iou = iou;
                        }
                    }
                    if let Some(gi) = best {
                        taken[gi] = true;
                    }
                    ranked.push((d.score.unwrap(), img, rank, best.is_some()));
                }
            }
            ranked.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap()
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });
            let flags: Vec<bool> = ranked.iter().map(|r| r.3).collect();
            row.push(naive_ap(&flags, n_gt, recall_points));
        }
        table.insert(cat, row);
    }
    let n = table.len() as f64;
    let at = |t: f64| {
        thresholds
            .iter()
            .position(|&v| (v - t).abs() < 1e-9)
            .map(|i| table.values().map(|r| r[i]).sum::<f64>() / n)
    };
    let ap = table
        .values()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .sum::<f64>()
        / n;
    RefReport {
        ap: Some(ap),
        ap50: at(0.5),
        ap75: at(0.75),
    }
}

pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

fn random_box<R: Rng>(rng: &mut R, extent: f64) -> BBox {
    let w = rng.random_range(2.0..extent / 2.0);
    let h = rng.random_range(2.0..extent / 2.0);
    BBox::new(
        rng.random_range(0.0..extent - w),
        rng.random_range(0.0..extent - h),
        w,
        h,
    )
}

fn jitter_box<R: Rng>(rng: &mut R, b: &BBox, amount: f64) -> BBox {
    BBox::new(
        b.x + rng.random_range(-amount..amount) * b.w,
        b.y + rng.random_range(-amount..amount) * b.h,
        b.w * (1.0 + rng.random_range(-amount..amount)),
        b.h * (1.0 + rng.random_range(-amount..amount)),
    )
}

/// Random ground truth and detections: detections are mostly jittered
/// copies of GT (sometimes relabelled) plus random false positives.
pub fn random_eval_case<R: Rng>(
    rng: &mut R,
    max_images: usize,
    max_dets: usize,
    n_cats: u64,
) -> (ImageGroups, ImageGroups) {
    let n_images = rng.random_range(1..=max_images);
    let mut gts = ImageGroups::new();
    let mut dets = ImageGroups::new();
    let mut next = 1;
    for img in 1..=n_images as u64 {
        let n_gt = rng.random_range(0..=4);
        let image_gts: Vec<Instance> = (0..n_gt)
            .map(|_| {
                next += 1;
                Instance::from_box(
                    next,
                    img,
                    rng.random_range(1..=n_cats),
                    random_box(rng, 100.0),
                )
            })
            .collect();
        let n_det = rng.random_range(0..=max_dets);
        let image_dets: Vec<Instance> = (0..n_det)
            .map(|_| {
                next += 1;
                let (b, cat) = if !image_gts.is_empty() && rng.random_bool(0.7) {
                    let g = &image_gts[rng.random_range(0..image_gts.len())];
                    let cat = if rng.random_bool(0.8) {
                        g.category_id
                    } else {
                        rng.random_range(1..=n_cats)
                    };
                    (jitter_box(rng, &g.bbox, 0.25), cat)
                } else {
                    (random_box(rng, 100.0), rng.random_range(1..=n_cats))
                };
                Instance::from_box(next, img, cat, b).with_score(rng.random_range(0.01..1.0))
            })
            .collect();
        gts.insert(img, image_gts);
        dets.insert(img, image_dets);
    }
    (gts, dets)
}

const GRID: u32 = 40;

fn rect_instance(id: u64, img: u64, cat: u64, b: &BBox) -> Instance {
    let x0 = b.x.max(0.0).round() as u32;
    let y0 = b.y.max(0.0).round() as u32;
    let x1 = (b.x + b.w).min(GRID as f64).round().max(x0 as f64 + 1.0) as u32;
    let y1 = (b.y + b.h).min(GRID as f64).round().max(y0 as f64 + 1.0) as u32;
    let mask = Bitmask::from_fn(GRID, GRID, |r, c| {
        (y0..y1).contains(&r) && (x0..x1).contains(&c)
    })
    .encode();
    Instance {
        id,
        image_id: img,
        category_id: cat,
        bbox: *b,
        area: mask.area() as f64,
        mask: Some(mask),
        score: None,
    }
}

/// Random fusion input: a controller and K models of varying quality, all
/// carrying rectangle masks on a 40x40 grid.
pub fn random_fusion_case<R: Rng>(
    rng: &mut R,
    n_images: usize,
    k_models: usize,
) -> (Vec<ImageGroups>, PseudoGroundTruth) {
    let mut controller = ImageGroups::new();
    let mut models = vec![ImageGroups::new(); k_models];
    let mut next = 1;
    for img in 1..=n_images as u64 {
        let n = rng.random_range(0..=3);
        let truth: Vec<(BBox, u64)> = (0..n)
            .map(|_| (random_box(rng, GRID as f64), rng.random_range(1..=3)))
            .collect();
        let ctrl: Vec<Instance> = truth
            .iter()
            .map(|(b, c)| {
                next += 1;
                rect_instance(next, img, *c, b).with_score(rng.random_range(0.3..1.0))
            })
            .collect();
        controller.insert(img, ctrl);
        for model in models.iter_mut() {
            let quality: f64 = rng.random_range(0.0..1.0);
            let mut preds = Vec::new();
            for (b, c) in &truth {
                if rng.random_bool(0.2 + 0.5 * (1.0 - quality)) {
                    continue;
                }
                next += 1;
                let jb = jitter_box(rng, b, 0.4 * (1.0 - quality));
                preds.push(
                    rect_instance(next, img, *c, &jb).with_score(rng.random_range(0.05..1.0)),
                );
            }
            for _ in 0..rng.random_range(0..=2) {
                next += 1;
                let b = random_box(rng, GRID as f64);
                preds.push(
                    rect_instance(next, img, rng.random_range(1..=3), &b)
                        .with_score(rng.random_range(0.05..1.0)),
                );
            }
            preds.sort_by(|a, b| b.score.unwrap().total_cmp(&a.score.unwrap()));
            model.insert(img, preds);
        }
    }
    (models, filter_controller(&controller, 0.5))
}

/// Brute-force greedy: at each step try every model with the reference
/// evaluator and keep the lowest-index maximiser.
pub fn brute_force_greedy(models: &[ImageGroups], pseudo: &PseudoGroundTruth) -> Vec<usize> {
    let images: Vec<u64> = pseudo.images.keys().copied().collect();
    let mut chosen = Vec::new();
    for (step, &img) in images.iter().enumerate() {
        let prefix: ImageGroups = images[..=step]
            .iter()
            .map(|&i| (i, pseudo.images[&i].clone()))
            .collect();
        let mut aps = Vec::new();
        for k in 0..models.len() {
            let mut waiting: ImageGroups = images[..step]
                .iter()
                .zip(&chosen)
                .map(|(&i, &m): (&u64, &usize)| (i, models[m][&i].clone()))
                .collect();
            waiting.insert(img, models[k][&img].clone());
            let r = reference_evaluate(&prefix, &waiting, &coco_thresholds(), 101, 100);
            aps.push(r.ap.unwrap_or(0.0));
        }
        let best = aps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        chosen.push(aps.iter().position(|&v| v >= best - 1e-12).unwrap());
    }
    chosen
}

/// Every selection vector in K^N, for exhaustive checks at tiny sizes.
pub fn all_selections(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..k).map(move |m| {
                    let mut v = prefix.clone();
                    v.push(m);
                    v
                })
            })
            .collect();
    }
    out
}

/// Two models with disjoint strengths: model 0 reproduces the pseudo ground
/// truth on odd image ids and emits a stray box elsewhere; model 1 the reverse.
pub fn dominance_case(n_images: u64) -> (Vec<ImageGroups>, PseudoGroundTruth) {
    let mut controller = ImageGroups::new();
    let mut models = vec![ImageGroups::new(), ImageGroups::new()];
    let mut next = 1;
    for img in 1..=n_images {
        let truth = BBox::new(4.0 + img as f64 % 7.0, 6.0, 12.0, 10.0);
        let gt = rect_instance(next, img, 1 + img % 2, &truth);
        next += 1;
        controller.insert(img, vec![gt.clone().with_score(0.9)]);
        let stray =
            rect_instance(next, img, 1 + img % 2, &BBox::new(30.0, 30.0, 6.0, 6.0)).with_score(0.7);
        next += 1;
        let good = Instance {
            id: next,
            ..gt.with_score(0.8)
        };
        next += 1;
        let strong = if img % 2 == 1 { 0 } else { 1 };
        models[strong].insert(img, vec![good]);
        models[1 - strong].insert(img, vec![stray]);
    }
    (models, filter_controller(&controller, 0.5))
}

/// Two-sided 99% normal-approximation interval for a binomial proportion.
pub fn binomial_99(p: f64, n: usize) -> (f64, f64) {
    let half = 2.5758293035489 * (p * (1.0 - p) / n as f64).sqrt();
    (p - half, p + half)
}

/// Small synthetic dataset whose every image has a guided partner:
/// categories 1 and 2 are mutually confused and every image holds one of them.
pub fn mixup_fixture(
    n_images: usize,
    seed: u64,
) -> (
    segfuse_core::Dataset,
    segfuse_core::mixup::MemorySource,
    segfuse_core::confusion::GuidedPairs,
) {
    use segfuse_core::synth::{gen_dataset, SynthConfig};
    let (dataset, images) = gen_dataset(&SynthConfig {
        seed,
        n_images,
        n_categories: 2,
        instances_per_image: (1, 3),
        height_range: (12, 24),
        width_range: (12, 24),
    })
    .unwrap();
    let pairs = [(1, 2), (2, 1)].into_iter().collect();
    (dataset, segfuse_core::mixup::MemorySource { images }, pairs)
}
