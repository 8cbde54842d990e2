mod support;

use proptest::prelude::*;
use segfuse_core::confusion::{build_confusion, guided_pairs, ConfusionConfig, GuidedPairs};
use segfuse_core::synth::{gen_dataset, perturb_predictions, NoiseProfile, SynthConfig};
use segfuse_core::{BBox, Category, Dataset, ImageGroups, ImageRecord, Instance, IouMode};

fn two_category_dataset() -> Dataset {
    Dataset {
        images: vec![ImageRecord {
            id: 1,
            width: 100,
            height: 100,
            file_name: "a.png".into(),
        }],
        annotations: vec![Instance::from_box(
            1,
            1,
            1,
            BBox::new(10.0, 10.0, 20.0, 20.0),
        )],
        categories: vec![
            Category {
                id: 1,
                name: "a".into(),
            },
            Category {
                id: 2,
                name: "b".into(),
            },
        ],
    }
}

#[test]
fn hand_accumulated_row() {
    let d = two_category_dataset();
    // IoU 0.9 and 0.8 against the single GT box
    let p_b = Instance::from_box(10, 1, 2, BBox::new(10.0, 10.0, 20.0, 18.0)).with_score(0.8);
    let p_a = Instance::from_box(11, 1, 1, BBox::new(10.0, 10.0, 20.0, 16.0)).with_score(0.2);
    let preds = ImageGroups::from([(1, vec![p_b, p_a])]);
    let c = build_confusion(&d, &preds, &ConfusionConfig::default()).unwrap();
    assert!((c.get(1, 1) - 0.2).abs() < 1e-12);
    assert!((c.get(1, 2) - 0.8).abs() < 1e-12);
    assert_eq!(c.matrix[1], vec![0.0, 0.0]);
    let pairs = guided_pairs(&c, 0.2);
    assert_eq!(pairs, [(1, 2)].into_iter().collect::<GuidedPairs>());
}

#[test]
fn perfect_predictions_give_identity() {
    let (d, _) = gen_dataset(&SynthConfig {
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let preds = perturb_predictions(&d, &NoiseProfile::zero_noise(), 1).unwrap();
    let c = build_confusion(&d, &preds, &ConfusionConfig::default()).unwrap();
    for (i, row) in c.matrix.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            assert_eq!(v, if i == j { 1.0 } else { 0.0 });
        }
    }
    assert!(guided_pairs(&c, 0.2).is_empty());
}

#[test]
fn swapped_categories_are_recovered() {
    let (d, _) = gen_dataset(&SynthConfig {
        seed: 4,
        n_categories: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let profile = NoiseProfile {
        confusion: vec![
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ],
        ..NoiseProfile::zero_noise()
    };
    let preds = perturb_predictions(&d, &profile, 9).unwrap();
    let c = build_confusion(&d, &preds, &ConfusionConfig::default()).unwrap();
    let expected = [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
    for (i, row) in expected.iter().enumerate() {
        if c.row_totals[i] > 0.0 {
            assert_eq!(c.matrix[i], row.to_vec());
        }
    }
    let pairs = guided_pairs(&c, 0.2);
    assert_eq!(pairs, [(1, 2), (2, 1)].into_iter().collect::<GuidedPairs>());
}

#[test]
fn prediction_counts_toward_every_overlapping_gt() {
    let mut d = two_category_dataset();
    d.categories.push(Category {
        id: 3,
        name: "c".into(),
    });
    d.annotations.push(Instance::from_box(
        2,
        1,
        3,
        BBox::new(10.0, 10.0, 20.0, 19.0),
    ));
    let p = Instance::from_box(10, 1, 2, BBox::new(10.0, 10.0, 20.0, 20.0)).with_score(0.6);
    let c = build_confusion(
        &d,
        &ImageGroups::from([(1, vec![p])]),
        &ConfusionConfig::default(),
    )
    .unwrap();
    assert_eq!(c.get(1, 2), 1.0);
    assert_eq!(c.get(3, 2), 1.0);
}

#[test]
fn mask_mode_requires_masks() {
    let d = two_category_dataset();
    let p = Instance::from_box(10, 1, 1, BBox::new(10.0, 10.0, 20.0, 20.0)).with_score(0.6);
    let config = ConfusionConfig {
        matching_mode: IouMode::Mask,
        ..ConfusionConfig::default()
    };
    assert!(build_confusion(&d, &ImageGroups::from([(1, vec![p])]), &config).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rows_normalize_and_scale_invariant(seed in any::<u64>(), lambda in 0.05f64..20.0) {
        let (d, _) = gen_dataset(&SynthConfig { seed, n_images: 6, ..SynthConfig::default() }).unwrap();
        let preds = perturb_predictions(&d, &NoiseProfile::moderate(), seed ^ 1).unwrap();
        let config = ConfusionConfig::default();
        let c = build_confusion(&d, &preds, &config).unwrap();
        for (row, total) in c.matrix.iter().zip(&c.row_totals) {
            let s: f64 = row.iter().sum();
            if *total > 0.0 {
                prop_assert!((s - 1.0).abs() < 1e-9);
            } else {
                prop_assert_eq!(s, 0.0);
            }
        }
        let scaled: ImageGroups = preds
            .iter()
            .map(|(&i, v)| (i, v.iter().map(|p| p.clone().with_score(p.score.unwrap() * lambda)).collect()))
            .collect();
        let c2 = build_confusion(&d, &scaled, &config).unwrap();
        for (r1, r2) in c.matrix.iter().zip(&c2.matrix) {
            for (a, b) in r1.iter().zip(r2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
        prop_assert_eq!(guided_pairs(&c, 0.2), guided_pairs(&c2, 0.2));
    }

    #[test]
    fn raising_beta_never_adds_pairs(seed in any::<u64>(), b1 in 0.0f64..1.0, b2 in 0.0f64..1.0) {
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        let (d, _) = gen_dataset(&SynthConfig { seed, n_images: 6, ..SynthConfig::default() }).unwrap();
        let profile = NoiseProfile {
            confusion: vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.6, 0.3], vec![0.4, 0.0, 0.6]],
            ..NoiseProfile::moderate()
        };
        let preds = perturb_predictions(&d, &profile, seed).unwrap();
        let c = build_confusion(&d, &preds, &ConfusionConfig::default()).unwrap();
        let loose = guided_pairs(&c, lo);
        let strict = guided_pairs(&c, hi);
        prop_assert!(strict.pairs.is_subset(&loose.pairs));
        for &(i, j) in &loose.pairs {
            prop_assert!(i != j && c.get(i, j) > lo);
        }
    }
}
