//! Dice and contrast metrics against brute-force and phantom oracles.

use std::collections::BTreeSet;

use proptest::prelude::*;
use winshift::metrics::{self, DiceCounts, HuDifference};
use winshift::phantom::{self, BoostDistribution, PhantomSpec};
use winshift::{Error, Execution, HuVolume, RngStream, SegmentationMask};

fn random_mask(rng: &mut RngStream, n: usize, density: f64) -> Vec<bool> {
    (0..n).map(|_| rng.next_f64() < density).collect()
}

/// Per-pixel double loop over a 16x16 grid.
fn naive_dice(pred: &[bool], truth: &[bool]) -> (u64, u64, u64, f64) {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for y in 0..16 {
        for x in 0..16 {
            let i = y * 16 + x;
            match (pred[i], truth[i]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    let d = if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    (tp, fp, fn_, d)
}

#[test]
fn dice_matches_naive_counting() {
    let mut rng = RngStream::new(4);
    for _ in 0..1000 {
        let density = rng.next_f64();
        let a = random_mask(&mut rng, 256, density);
        let density_b = rng.next_f64();
        let b = random_mask(&mut rng, 256, density_b);
        let c = DiceCounts::from_masks(&a, &b).unwrap();
        let (tp, fp, fn_, d) = naive_dice(&a, &b);
        assert_eq!((c.tp, c.fp, c.fn_), (tp, fp, fn_));
        assert_eq!(c.dice(), d);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn dice_properties(a in prop::collection::vec(any::<bool>(), 1..300), seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let b: Vec<bool> = (0..a.len()).map(|_| rng.next_f64() < 0.5).collect();
        let not_a: Vec<bool> = a.iter().map(|v| !v).collect();
        let d = metrics::dice(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, metrics::dice(&b, &a).unwrap());
        if a.iter().any(|&v| v) {
            prop_assert_eq!(metrics::dice(&a, &a).unwrap(), 1.0);
        }
        prop_assert_eq!(metrics::dice(&a, &not_a).unwrap(), 0.0);
    }

    #[test]
    fn hu_difference_ignores_voxel_order(values in prop::collection::vec((-200i32..300, 0u8..3), 2..200), seed in any::<u64>()) {
        let mut values = values;
        values.push((10, 1));
        values.push((-10, 2));
        let build = |v: &[(i32, u8)]| {
            let n = v.len();
            (
                HuVolume::new([n, 1, 1], [1.0; 3], v.iter().map(|p| p.0 as f32).collect(), "p").unwrap(),
                SegmentationMask::new([n, 1, 1], v.iter().map(|p| p.1).collect()).unwrap(),
            )
        };
        let (vol, mask) = build(&values);
        let before = metrics::mean_hu_difference(&vol, &mask).unwrap();
        // Fisher-Yates with the crate stream
        let mut rng = RngStream::new(seed);
        for i in (1..values.len()).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            values.swap(i, j);
        }
        let (vol, mask) = build(&values);
        prop_assert_eq!(metrics::mean_hu_difference(&vol, &mask).unwrap(), before);
    }

    #[test]
    fn difficult_set_grows_with_threshold(diffs in prop::collection::vec(0.0f64..80.0, 1..40), t1 in 0.0f64..60.0, dt in 0.0f64..30.0) {
        let rows = |t: f64| {
            let m = diffs.iter().enumerate().map(|(i, d)| (format!("v{i:02}"), Some(HuDifference::new(100.0 + d, 100.0))));
            metrics::identify_difficult(m, t).unwrap().difficult().map(|r| r.source_id.clone()).collect::<BTreeSet<_>>()
        };
        prop_assert!(rows(t1).is_subset(&rows(t1 + dt)));
    }
}

#[test]
fn mask_dice_checks_dims() {
    let a = SegmentationMask::new([2, 2, 1], vec![1, 2, 0, 0]).unwrap();
    let b = SegmentationMask::new([4, 1, 1], vec![1, 2, 0, 0]).unwrap();
    assert!(matches!(
        DiceCounts::from_labels(&a, &b, &BTreeSet::from([1, 2])),
        Err(Error::DimensionMismatch { .. })
    ));
    let c = DiceCounts::from_labels(&a, &a, &BTreeSet::from([1, 2])).unwrap();
    assert_eq!(c.dice(), 1.0);
    let liver_only = DiceCounts::from_labels(&a, &a, &BTreeSet::from([2])).unwrap();
    assert_eq!(liver_only.tp, 1);
}

#[test]
fn designed_offset_is_recovered() {
    let spec = PhantomSpec {
        dims: [64, 64, 32],
        liver_hu: 75.0,
        tumor_hu: 40.0,
        contrast_boost: 0.0,
        noise_std: 5.0,
        tumor_radius: 8.0,
        seed: 21,
        ..PhantomSpec::default()
    };
    let p = phantom::generate(&spec).unwrap();
    let d = metrics::mean_hu_difference(&p.volume, &p.mask).unwrap();
    assert!((d.abs_diff - 35.0).abs() <= 0.5, "{}", d.abs_diff);
    assert_eq!(p.truth.abs_diff, 35.0);
}

#[test]
fn designed_cohort_flags_exactly_the_low_contrast_cases() {
    let base = PhantomSpec {
        dims: [32, 32, 12],
        liver_hu: 40.0,
        tumor_hu: 40.0,
        // noise-free so the 20 HU case sits exactly on the strict boundary
        noise_std: 0.0,
        tumor_radius: 3.5,
        ..PhantomSpec::default()
    };
    let diffs: Vec<f64> = (1..=10).map(|k| 5.0 * k as f64).collect();
    let cohort = phantom::generate_cohort(
        10,
        &base,
        &BoostDistribution::Values {
            values: diffs.clone(),
        },
        5,
        Execution::Parallel,
    )
    .unwrap();
    let m = cohort.iter().map(|p| {
        (
            p.volume.source_id().to_string(),
            Some(metrics::mean_hu_difference(&p.volume, &p.mask).unwrap()),
        )
    });
    let report = metrics::identify_difficult(m, metrics::DIFFICULT_THRESHOLD_HU).unwrap();
    let flagged: Vec<f64> = report
        .difficult()
        .map(|r| {
            let i: usize = r.source_id.trim_start_matches("phantom-").parse().unwrap();
            diffs[i]
        })
        .collect();
    assert_eq!(flagged, vec![5.0, 10.0, 15.0]);
}

#[test]
fn separation_rows_cover_every_scheme() {
    let p = phantom::generate(&PhantomSpec {
        dims: [24, 24, 8],
        noise_std: 0.0,
        tumor_radius: 2.5,
        ..PhantomSpec::default()
    })
    .unwrap();
    let base = winshift::ViewingWindow::from_level_width(60.0, 300.0).unwrap();
    let shift = winshift::WindowShiftPolicy::new(30.0, 150.0, 0.3).unwrap();
    let norm = winshift::Normalization::new(0.5, 0.2).unwrap();
    let rows = metrics::separation_by_scheme(&p.volume, &p.mask, &base, &shift, &norm).unwrap();
    let schemes: BTreeSet<&str> = rows.iter().map(|r| r.scheme.as_str()).collect();
    for s in [
        "base_window",
        "window_shift_liver_centred",
        "window_shift_low",
        "window_shift_high",
        "additive_brightness",
        "multiplicative_brightness",
        "contrast",
        "gamma",
        "gamma_inverse",
    ] {
        assert!(schemes.contains(s), "{s}");
    }
    let base_row = &rows[0];
    // noise-free: 110 HU liver, 40 HU tumor, both inside the window
    assert!((base_row.separation - 70.0 / 300.0).abs() < 1e-6);
}
