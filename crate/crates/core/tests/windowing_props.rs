//! Properties of clipping, rescaling, normalization and level sampling.

use proptest::prelude::*;
use winshift::windowing::{
    apply_window, draw_window, preprocess_fused, preprocess_inference, rescale_unit, window_unit,
    z_normalize, PreprocessedSlice, Stage,
};
use winshift::{Error, Normalization, RngStream, ViewingWindow, WindowShiftPolicy};

fn window() -> impl Strategy<Value = ViewingWindow> {
    (-500.0f64..500.0, 1.0f64..2000.0)
        .prop_map(|(l, w)| ViewingWindow::from_level_width(l, w).unwrap())
}

fn pixels() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-3000.0f32..4000.0, 1..200)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn clipping_is_idempotent_monotone_and_lipschitz(w in window(), x in pixels()) {
        let y = apply_window(&x, &w);
        prop_assert_eq!(apply_window(&y, &w), y.clone());
        for (i, &a) in x.iter().enumerate() {
            prop_assert!(y[i] as f64 >= w.lower() - 1e-3 && y[i] as f64 <= w.upper() + 1e-3);
            for (j, &b) in x.iter().enumerate().skip(i + 1).take(8) {
                if a <= b {
                    prop_assert!(y[i] <= y[j]);
                }
                prop_assert!((y[i] - y[j]).abs() <= (a - b).abs());
            }
        }
    }

    #[test]
    fn unit_scaling_stays_in_range(w in window(), x in pixels()) {
        let u = rescale_unit(&apply_window(&x, &w), &w).unwrap();
        prop_assert!(u.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let slice = PreprocessedSlice { pixels: u, stage: Stage::UnitScaled, window_used: w };
        prop_assert!(slice.check().is_ok());
    }

    #[test]
    fn fused_equals_staged(w in window(), x in pixels(), mean in 0.1f64..0.9, std in 0.01f64..1.0) {
        let norm = Normalization::new(mean, std).unwrap();
        let staged = z_normalize(&rescale_unit(&apply_window(&x, &w), &w).unwrap(), &norm);
        let fused = preprocess_fused(&x, &w, &norm);
        prop_assert_eq!(staged.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            fused.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(window_unit(&x, &w), rescale_unit(&apply_window(&x, &w), &w).unwrap());
    }

    #[test]
    fn shifting_level_and_pixels_together_is_invisible(
        level in -300i32..300,
        half_width in 1i32..800,
        delta in -400i32..400,
        x in prop::collection::vec(-2000i32..2000, 1..100),
    ) {
        let w = ViewingWindow::from_level_width(level as f64, 2.0 * half_width as f64).unwrap();
        let moved = w.with_level((level + delta) as f64).unwrap();
        let a: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let b: Vec<f32> = x.iter().map(|&v| (v + delta) as f32).collect();
        prop_assert_eq!(window_unit(&a, &w), window_unit(&b, &moved));
    }

    #[test]
    fn draws_two_numbers_whatever_the_gate(seed in any::<u64>(), p in 0.0f64..=1.0) {
        let base = ViewingWindow::from_level_width(60.0, 400.0).unwrap();
        let policy = WindowShiftPolicy::new(20.0, 180.0, p).unwrap();
        let mut rng = RngStream::new(seed);
        let (w, shifted) = draw_window(&policy, &base, &mut rng).unwrap();
        prop_assert_eq!(rng.draws(), 2);
        prop_assert_eq!(w.width(), base.width());
        if shifted {
            prop_assert!(w.level() >= 20.0 && w.level() < 180.0);
        } else {
            prop_assert_eq!(w, base);
        }
    }

    #[test]
    fn never_shift_is_inference(seed in any::<u64>(), x in pixels()) {
        let base = ViewingWindow::from_bounds(-87.3, 211.9).unwrap();
        let norm = Normalization::new(0.47, 0.21).unwrap();
        let policy = WindowShiftPolicy::new(-10.0, 140.0, 0.0).unwrap();
        let (w, shifted) = draw_window(&policy, &base, &mut RngStream::new(seed)).unwrap();
        prop_assert!(!shifted);
        prop_assert_eq!(preprocess_fused(&x, &w, &norm), preprocess_inference(&x, &base, &norm));
    }
}

#[test]
fn degenerate_shift_range_at_base_level_is_base() {
    let base = ViewingWindow::from_bounds(-87.3, 211.9).unwrap();
    let policy = WindowShiftPolicy::new(base.level(), base.level(), 1.0).unwrap();
    for seed in 0..100 {
        let (w, shifted) = draw_window(&policy, &base, &mut RngStream::new(seed)).unwrap();
        assert!(shifted);
        assert_eq!(w, base);
    }
}

#[test]
fn window_json_accepts_level_width_only() {
    let w: ViewingWindow = serde_json::from_str(r#"{"level": 40, "width": 400}"#).unwrap();
    assert_eq!((w.lower(), w.upper()), (-160.0, 240.0));
    let full = serde_json::to_value(w).unwrap();
    assert_eq!(full["lower"], -160.0);
    assert!(serde_json::from_str::<ViewingWindow>(
        r#"{"level": 40, "width": 400, "lower": -100, "upper": 240}"#
    )
    .is_err());
    assert!(serde_json::from_str::<ViewingWindow>(r#"{"level": 40, "width": 0}"#).is_err());
    let exact = ViewingWindow::from_bounds(-103.25, 219.5).unwrap();
    let back: ViewingWindow = serde_json::from_value(serde_json::to_value(exact).unwrap()).unwrap();
    assert_eq!(back, exact);
}

#[test]
fn invalid_inputs() {
    assert!(matches!(
        ViewingWindow::from_bounds(5.0, 5.0),
        Err(Error::DegenerateWindow { .. })
    ));
    assert!(ViewingWindow::from_level_width(0.0, -1.0).is_err());
    assert!(WindowShiftPolicy::new(10.0, 0.0, 0.5).is_err());
    assert!(WindowShiftPolicy::new(0.0, 10.0, 1.5).is_err());
    assert!(matches!(Normalization::new(0.5, 0.0), Err(Error::ZeroStd)));
    let w = ViewingWindow::from_level_width(0.0, 100.0).unwrap();
    let bad = PreprocessedSlice {
        pixels: vec![0.2, 1.5],
        stage: Stage::UnitScaled,
        window_used: w,
    };
    assert!(matches!(bad.check(), Err(Error::StageContract { .. })));
    let clipped = PreprocessedSlice {
        pixels: vec![-50.0, 60.0],
        stage: Stage::ClippedHu,
        window_used: w,
    };
    assert!(clipped.check().is_err());
}

#[test]
fn normalization_inverts() {
    let n = Normalization::new(0.4, 0.25).unwrap();
    for u in [0.0f32, 0.25, 0.4, 1.0] {
        assert!((n.invert(n.apply(u) as f64) - u as f64).abs() < 1e-6);
    }
    assert_eq!(Normalization::new(0.5, 0.25).unwrap().apply(0.5), 0.0);
}
