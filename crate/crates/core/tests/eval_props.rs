mod support;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use segfuse_core::{evaluate, BBox, EvalAccumulator, EvalConfig, ImageGroups, Instance, IouMode};
use support::{coco_thresholds, random_eval_case, reference_evaluate};

fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}

fn single(flags_fp_first: bool) -> (ImageGroups, ImageGroups) {
    let gt = Instance::from_box(1, 1, 1, BBox::new(0.0, 0.0, 10.0, 10.0));
    let tp = Instance::from_box(2, 1, 1, BBox::new(0.0, 0.0, 10.0, 10.0));
    let fp = Instance::from_box(3, 1, 1, BBox::new(50.0, 50.0, 10.0, 10.0));
    let (hi, lo) = if flags_fp_first { (fp, tp) } else { (tp, fp) };
    let dets = vec![hi.with_score(0.9), lo.with_score(0.8)];
    (
        ImageGroups::from([(1, vec![gt])]),
        ImageGroups::from([(1, dets)]),
    )
}

#[test]
fn anchor_tp_then_fp() {
    let (g, d) = single(false);
    let r = evaluate(&g, &d, &EvalConfig::default()).unwrap();
    assert_eq!(r.ap, Some(1.0));
}

#[test]
fn anchor_fp_then_tp() {
    let (g, d) = single(true);
    let r = evaluate(&g, &d, &EvalConfig::default()).unwrap();
    assert!((r.ap.unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn matches_reference_on_random_cases() {
    let mut rng = support::rng(7);
    for _ in 0..300 {
        let (g, d) = random_eval_case(&mut rng, 4, 8, 3);
        let ours = evaluate(&g, &d, &EvalConfig::default()).unwrap();
        let reference = reference_evaluate(&g, &d, &coco_thresholds(), 101, 100);
        assert!(
            close(ours.ap, reference.ap, 1e-9),
            "{ours:?} vs {reference:?}"
        );
        assert!(close(ours.ap50, reference.ap50, 1e-9));
        assert!(close(ours.ap75, reference.ap75, 1e-9));
    }
}

#[test]
fn max_dets_cap_matches_reference() {
    let mut rng = support::rng(8);
    let config = EvalConfig {
        max_dets_per_image: 3,
        ..EvalConfig::default()
    };
    for _ in 0..100 {
        let (g, d) = random_eval_case(&mut rng, 3, 8, 2);
        let ours = evaluate(&g, &d, &config).unwrap();
        let reference = reference_evaluate(&g, &d, &coco_thresholds(), 101, 3);
        assert!(close(ours.ap, reference.ap, 1e-9));
    }
}

fn accumulate(
    g: &ImageGroups,
    d: &ImageGroups,
    order: &[u64],
    compact_every: usize,
) -> EvalAccumulator {
    let mut acc = EvalAccumulator::new(EvalConfig::default()).unwrap();
    for (i, img) in order.iter().enumerate() {
        let dets = d.get(img).map(Vec::as_slice).unwrap_or(&[]);
        acc.add_image(*img, &g[img], dets).unwrap();
        if compact_every > 0 && (i + 1) % compact_every == 0 {
            acc.compact();
        }
    }
    acc
}

#[test]
fn incremental_equals_batch_any_order() {
    let mut rng = support::rng(21);
    for case in 0..150 {
        let (g, d) = random_eval_case(&mut rng, 6, 8, 3);
        let batch = evaluate(&g, &d, &EvalConfig::default()).unwrap();
        let mut order: Vec<u64> = g.keys().copied().collect();
        order.shuffle(&mut rng);
        let acc = accumulate(&g, &d, &order, case % 3);
        let inc = acc.ap();
        assert!(close(inc.ap, batch.ap, 1e-12));
        assert!(close(inc.ap50, batch.ap50, 1e-12));
        assert!(close(inc.ap75, batch.ap75, 1e-12));
        assert_eq!(
            inc.per_category.keys().collect::<Vec<_>>(),
            batch.per_category.keys().collect::<Vec<_>>()
        );
    }
}

#[test]
fn perfect_detections_score_one_in_both_modes() {
    let mut rng = support::rng(2);
    let (models, pseudo) = support::random_fusion_case(&mut rng, 6, 1);
    drop(models);
    let dets: ImageGroups = pseudo
        .images
        .iter()
        .map(|(&i, v)| (i, v.iter().map(|g| g.clone().with_score(1.0)).collect()))
        .collect();
    if pseudo.images.values().all(Vec::is_empty) {
        return;
    }
    for mode in [IouMode::Box, IouMode::Mask] {
        let r = evaluate(&pseudo.images, &dets, &EvalConfig::with_mode(mode)).unwrap();
        assert_eq!(r.ap, Some(1.0), "{mode:?}");
    }
}

#[test]
fn no_ground_truth_is_undefined() {
    let g = ImageGroups::from([(1, vec![])]);
    let d = ImageGroups::from([(
        1,
        vec![Instance::from_box(1, 1, 1, BBox::new(0.0, 0.0, 1.0, 1.0)).with_score(0.5)],
    )]);
    assert_eq!(evaluate(&g, &d, &EvalConfig::default()).unwrap().ap, None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn monotone_score_transform_is_invariant(seed in any::<u64>(), scale in 0.01f64..1.0) {
        let mut rng = support::rng(seed);
        let (g, d) = random_eval_case(&mut rng, 4, 8, 3);
        let scaled: ImageGroups = d
            .iter()
            .map(|(&i, v)| (i, v.iter().map(|x| x.clone().with_score(x.score.unwrap() * scale)).collect()))
            .collect();
        let a = evaluate(&g, &d, &EvalConfig::default()).unwrap();
        let b = evaluate(&g, &scaled, &EvalConfig::default()).unwrap();
        prop_assert!(close(a.ap, b.ap, 1e-12));
    }

    #[test]
    fn appending_a_lowest_scored_false_positive_never_helps(seed in any::<u64>()) {
        let mut rng = support::rng(seed);
        let (g, mut d) = random_eval_case(&mut rng, 4, 8, 3);
        let before = evaluate(&g, &d, &EvalConfig::default()).unwrap();
        let img = *g.keys().next().unwrap();
        let cat = g.values().flatten().next().map_or(1, |x| x.category_id);
        d.entry(img).or_default().push(
            Instance::from_box(9999, img, cat, BBox::new(500.0, 500.0, 3.0, 3.0)).with_score(0.001),
        );
        let after = evaluate(&g, &d, &EvalConfig::default()).unwrap();
        prop_assert!(after.ap_or_zero() <= before.ap_or_zero() + 1e-12);
    }

    #[test]
    fn ap_lies_in_unit_interval(seed in any::<u64>()) {
        let mut rng = support::rng(seed);
        let (g, d) = random_eval_case(&mut rng, 4, 8, 3);
        let r = evaluate(&g, &d, &EvalConfig::default()).unwrap();
        if let Some(ap) = r.ap {
            prop_assert!((0.0..=1.0).contains(&ap));
        }
    }
}
