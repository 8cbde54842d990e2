mod support;

use segfuse_core::synth::{gen_dataset, perturb_predictions, NoiseProfile, SynthConfig};
use segfuse_core::{bbox_from_mask, evaluate, EvalConfig, IouMode};

#[test]
fn annotations_are_consistent() {
    let config = SynthConfig {
        seed: 12,
        ..SynthConfig::default()
    };
    let (d, images) = gen_dataset(&config).unwrap();
    d.validate().unwrap();
    assert_eq!(images.len(), config.n_images);
    for (img, anns) in d.gt_by_image() {
        let n = anns.len();
        assert!((config.instances_per_image.0..=config.instances_per_image.1).contains(&n));
        let rec = d.image(img).unwrap();
        assert_eq!(images[&img].dimensions(), (rec.width, rec.height));
        for a in anns {
            assert_eq!(a.bbox, bbox_from_mask(a.mask.as_ref().unwrap()));
        }
    }
}

#[test]
fn same_seed_same_output() {
    let config = SynthConfig {
        seed: 5,
        ..SynthConfig::default()
    };
    assert_eq!(gen_dataset(&config).unwrap(), gen_dataset(&config).unwrap());
    let (d, _) = gen_dataset(&config).unwrap();
    let p = NoiseProfile::moderate();
    assert_eq!(
        perturb_predictions(&d, &p, 3).unwrap(),
        perturb_predictions(&d, &p, 3).unwrap()
    );
}

#[test]
fn zero_noise_scores_perfectly() {
    let (d, _) = gen_dataset(&SynthConfig {
        seed: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    let preds = perturb_predictions(&d, &NoiseProfile::zero_noise(), 0).unwrap();
    assert!(preds.values().flatten().all(|p| p.score == Some(0.9)));
    for mode in [IouMode::Box, IouMode::Mask] {
        let r = evaluate(&d.gt_by_image(), &preds, &EvalConfig::with_mode(mode)).unwrap();
        assert_eq!(r.ap, Some(1.0));
    }
}

#[test]
fn full_drop_gives_nothing() {
    let (d, _) = gen_dataset(&SynthConfig {
        seed: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    let profile = NoiseProfile {
        drop_rate: 1.0,
        ..NoiseProfile::zero_noise()
    };
    let preds = perturb_predictions(&d, &profile, 0).unwrap();
    assert!(preds.values().all(Vec::is_empty));
}

#[test]
fn drop_fraction_within_binomial_interval() {
    let (d, _) = gen_dataset(&SynthConfig {
        seed: 1,
        n_images: 500,
        height_range: (16, 24),
        width_range: (16, 24),
        ..SynthConfig::default()
    })
    .unwrap();
    let n_gt = d.annotations.len();
    assert!(n_gt >= 1000);
    let rate = 0.3;
    let profile = NoiseProfile {
        drop_rate: rate,
        ..NoiseProfile::zero_noise()
    };
    let kept: usize = perturb_predictions(&d, &profile, 2)
        .unwrap()
        .values()
        .map(Vec::len)
        .sum();
    let dropped = (n_gt - kept) as f64 / n_gt as f64;
    let (lo, hi) = support::binomial_99(rate, n_gt);
    assert!(
        (lo..=hi).contains(&dropped),
        "{dropped} outside [{lo}, {hi}]"
    );
}
