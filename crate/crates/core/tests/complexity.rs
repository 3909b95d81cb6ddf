mod common;

use common::*;
use proptest::prelude::*;
use saec::codec::QualityFactor;
use saec::complexity::{
    canny, complexity_score, csv_row, edge_density, features_on_canvas, intensity_entropy,
    jpeg_residual, laplacian_variance, sobel_mean_magnitude, ComplexityError, ComplexityWeights,
    CANNY_HIGH, CANNY_LOW, CANNY_SIGMA, CSV_HEADER,
};
use saec::imgproc::GrayImage;
use saec::quantkernel::Label;
use saec::simharness::synth::synth_image;

fn q50() -> QualityFactor {
    QualityFactor::default()
}

fn corpus() -> Vec<GrayImage> {
    let mut r = rng(20);
    let mut out = vec![noise_image(21, C, C), step_image(), gradient_image(C, C)];
    for i in 0..6 {
        let label = if i % 2 == 0 {
            Label::Good
        } else {
            Label::Defect
        };
        out.push(synth_image(&mut r, C, label));
    }
    out
}

#[test]
fn metrics_match_oracles() {
    for img in corpus() {
        assert!((intensity_entropy(&img) - entropy_oracle(&img)).abs() < 1e-12);
        let lv = laplacian_variance(&img);
        assert!((lv - laplacian_var_oracle(&img)).abs() <= 1e-9 * lv.max(1.0));
        let sm = sobel_mean_magnitude(&img).unwrap();
        assert!((sm - sobel_mean_oracle(&img)).abs() < 1e-9);
        let mine = canny(&img, CANNY_SIGMA, CANNY_LOW, CANNY_HIGH);
        let reference = canny_oracle(&img);
        let diff = mine.iter().zip(&reference).filter(|(a, b)| a != b).count();
        assert_eq!(diff, 0, "canny differs on {diff} pixels");
        let rj = jpeg_residual(&img, q50());
        assert!((rj - residual_oracle(&img, 50)).abs() < 1e-4);
    }
}

#[test]
fn step_edge_is_one_column() {
    let e = canny(&step_image(), CANNY_SIGMA, CANNY_LOW, CANNY_HIGH);
    let cols: std::collections::BTreeSet<usize> = e
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| i % C)
        .collect();
    assert_eq!(cols.len(), 1);
    assert!((edge_density(&step_image()).unwrap() - 1.0 / 192.0).abs() < 1e-12);
}

#[test]
fn sobel_step_value() {
    let m = sobel_mean_magnitude(&step_image()).unwrap();
    assert!((m - 10.625).abs() < 1e-9);
}

#[test]
fn checkerboard_laplacian() {
    // each pixel sees four opposite neighbours: response ±4·255
    let img = GrayImage::from_fn(C, C, |x, y| if (x + y) % 2 == 0 { 0 } else { 255 }).unwrap();
    let v = laplacian_variance(&img);
    assert!((v - laplacian_var_oracle(&img)).abs() < 1e-6);
    let interior = 1020.0f64 * 1020.0;
    assert!(v > 0.9 * interior && v <= interior + 1e-6);
}

#[test]
fn canvas_only_metrics_reject_other_sizes() {
    let img = noise_image(3, 50, 50);
    assert!(matches!(
        sobel_mean_magnitude(&img),
        Err(ComplexityError::DimensionMismatch { .. })
    ));
    assert!(matches!(
        edge_density(&img),
        Err(ComplexityError::DimensionMismatch { .. })
    ));
}

#[test]
fn noise_is_more_complex_than_step() {
    let w = ComplexityWeights::default();
    let noise = complexity_score(&noise_image(4, C, C), &w, q50())
        .unwrap()
        .s_c;
    let step = complexity_score(&step_image(), &w, q50()).unwrap().s_c;
    assert!(noise > step, "{noise} vs {step}");
}

#[test]
fn resized_inputs_score_on_canvas() {
    let w = ComplexityWeights::default();
    let small = noise_image(5, 64, 40);
    let canvas = saec::imgproc::resize_to_canvas(&small, C).unwrap();
    let a = complexity_score(&small, &w, q50()).unwrap();
    let b = complexity_score(&canvas, &w, q50()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn invalid_weights() {
    assert!(ComplexityWeights::new([0.5, 0.5, 0.5, -0.1, 0.0]).is_err());
    assert!(ComplexityWeights::new([f64::NAN, 0.0, 0.0, 0.0, 1.0]).is_err());
    assert!("0.3,0.25,0.2,0.15".parse::<ComplexityWeights>().is_err());
    let w: ComplexityWeights = "0.2,0.2,0.2,0.2,0.2".parse().unwrap();
    assert_eq!(w.as_array(), [0.2; 5]);
}

#[test]
fn csv_row_format() {
    let s = complexity_score(
        &GrayImage::filled(C, C, 128).unwrap(),
        &ComplexityWeights::default(),
        q50(),
    )
    .unwrap();
    assert_eq!(CSV_HEADER.split(',').count(), 7);
    assert_eq!(
        csv_row("a/b.png", &s),
        "a/b.png,0.000000,0.000000,0.000000,0.000000,0.000000,0.000000"
    );
}

#[test]
fn feature_bounds_on_many_images() {
    let mut r = rng(22);
    for i in 0..1000 {
        let side = 16 + (i % 7) * 8;
        let label = if i % 3 == 0 {
            Label::Defect
        } else {
            Label::Good
        };
        let img = synth_image(&mut r, side, label);
        let canvas = saec::imgproc::resize_to_canvas(&img, C).unwrap();
        let f = features_on_canvas(&canvas, q50()).unwrap();
        assert!((0.0..=1.0).contains(&f.h_i));
        assert!((0.0..=1.0).contains(&f.e_d));
        assert!((0.0..=1.0).contains(&f.r_j));
        assert!(f.lap_var >= 0.0 && f.sobel_mean >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn rotation_invariant_statistics(seed in any::<u64>()) {
        let img = noise_image(seed, C, C);
        let rot = img.rotate90();
        prop_assert!((intensity_entropy(&img) - intensity_entropy(&rot)).abs() < 1e-12);
        let (a, b) = (laplacian_variance(&img), laplacian_variance(&rot));
        prop_assert!((a - b).abs() <= 1e-9 * a);
        let (a, b) = (sobel_mean_magnitude(&img).unwrap(), sobel_mean_magnitude(&rot).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a);
    }

    #[test]
    fn entropy_ignores_pixel_order(seed in any::<u64>(), shift in 1usize..1000) {
        let img = noise_image(seed, 64, 64);
        let mut px = img.pixels().to_vec();
        px.rotate_left(shift);
        let perm = GrayImage::new(64, 64, px).unwrap();
        prop_assert!((intensity_entropy(&img) - intensity_entropy(&perm)).abs() < 1e-12);
    }

    #[test]
    fn score_monotone_in_weights(seed in any::<u64>(), k in 0usize..5, bump in 0.01f64..1.0) {
        let img = noise_image(seed, C, C);
        let base = ComplexityWeights::default();
        let mut w = base.as_array();
        w[k] += bump;
        let more = ComplexityWeights::new(w).unwrap();
        let f = features_on_canvas(&img, q50()).unwrap();
        prop_assert!(f.combine(&more) >= f.combine(&base));
    }

    #[test]
    fn constant_scores_near_zero(v in any::<u8>(), w in prop::array::uniform5(0.0f64..1.0)) {
        let w = ComplexityWeights::new(w).unwrap();
        let s = complexity_score(&GrayImage::filled(C, C, v).unwrap(), &w, q50()).unwrap();
        // only the DC rounding of the codec can contribute
        prop_assert!(s.s_c >= 0.0 && s.s_c <= w.as_array()[4] / 255.0 + 1e-12);
    }
}
