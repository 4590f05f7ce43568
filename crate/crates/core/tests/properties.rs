use ndarray::{Array2, Axis};
use proptest::prelude::*;

use texdistill::data_manifest::{
    parse_manifest, per_class_count, render_manifest, sample_low_data, stratified_split, DatasetIndex, Sample,
};
use texdistill::image_pipeline::{flip_horizontal, flip_vertical, preprocess_global, sample_local_patch, PatchSpec, PipelineConfig, RawImage};
use texdistill::objectives::{cross_entropy, focal_loss, teacher_hard_label, total_loss, LossConfig};
use texdistill::rng;

fn raw_image(h: usize, w: usize, seed: u64) -> RawImage {
    let mut r = rng::seeded(seed);
    let data = (0..h * w * 3).map(|_| rng::index(&mut r, 256) as u8).collect();
    RawImage::from_rgb(h, w, data, "p.png").unwrap()
}

fn index(classes: usize, per_class: usize) -> DatasetIndex {
    let names: Vec<String> = (0..classes).map(|c| format!("k{c}")).collect();
    let samples = (0..classes)
        .flat_map(|c| (0..per_class).map(move |i| Sample { path: format!("k{c}/{i:05}.png"), class_id: c }))
        .collect();
    DatasetIndex {
        root: "/data".into(),
        classes: names,
        samples,
        image_size_hint: None,
        warnings: Vec::new(),
    }
}

fn logits() -> impl Strategy<Value = (Array2<f64>, Vec<usize>)> {
    (1usize..6, 2usize..7).prop_flat_map(|(n, c)| {
        (
            proptest::collection::vec(-8.0f64..8.0, n * c),
            proptest::collection::vec(0..c, n),
        )
            .prop_map(move |(v, y)| (Array2::from_shape_vec((n, c), v).unwrap(), y))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn patches_stay_inside_the_image(h in 20usize..90, w in 20usize..90, seed in any::<u64>()) {
        let raw = raw_image(h, w, 1);
        let cfg = PipelineConfig { global_size: 16, local_size: 8, ..Default::default() };
        let mut r = rng::seeded(seed);
        for _ in 0..5 {
            let (t, s) = sample_local_patch(&raw, &cfg, true, &mut r).unwrap();
            prop_assert!(s.top + s.side <= h && s.left + s.side <= w);
            prop_assert!((0.1..=0.5).contains(&s.fraction));
            prop_assert_eq!(s.side, PatchSpec::side_for(s.fraction, h, w));
            prop_assert_eq!(t.data.dim(), (3, 8, 8));
        }
    }

    #[test]
    fn flips_are_involutions(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let x = ndarray::Array3::from_shape_fn((3, h, w), |_| rng::unit(&mut r) as f32);
        prop_assert_eq!(flip_horizontal(&flip_horizontal(&x)), x.clone());
        prop_assert_eq!(flip_vertical(&flip_vertical(&x)), x.clone());
        prop_assert_eq!(flip_vertical(&flip_horizontal(&x)), flip_horizontal(&flip_vertical(&x)));
    }

    #[test]
    fn flips_preserve_pixel_values(size in 8usize..30, seed in any::<u64>()) {
        let raw = raw_image(size + 3, size, seed);
        let cfg = PipelineConfig { global_size: size, ..Default::default() };
        let plain = preprocess_global(&raw, &cfg, false, &mut rng::seeded(0));
        let augmented = preprocess_global(&raw, &cfg, true, &mut rng::seeded(seed));
        for c in 0..3 {
            let mut a: Vec<f32> = plain.data.index_axis(Axis(0), c).iter().copied().collect();
            let mut b: Vec<f32> = augmented.data.index_axis(Axis(0), c).iter().copied().collect();
            a.sort_by(f32::total_cmp);
            b.sort_by(f32::total_cmp);
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn focal_never_exceeds_cross_entropy((z, y) in logits(), gamma in 0.0f64..5.0) {
        let ce = cross_entropy(z.view(), &y).unwrap();
        let fl = focal_loss(z.view(), &y, gamma).unwrap();
        prop_assert!(fl <= ce + 1e-15);
        prop_assert!(fl >= 0.0);
        prop_assert_eq!(focal_loss(z.view(), &y, 0.0).unwrap(), ce);
    }

    #[test]
    fn teacher_label_is_invariant_to_monotone_maps((z, _) in logits(), shift in -10.0f64..10.0, scale in 0.1f64..10.0) {
        let mapped = z.mapv(|v| scale * v + shift);
        prop_assert_eq!(teacher_hard_label(z.view()), teacher_hard_label(mapped.view()));
        let labels = teacher_hard_label(z.view());
        for (row, &l) in z.outer_iter().zip(&labels) {
            prop_assert!(row.iter().all(|&v| v <= row[l]));
        }
    }

    #[test]
    fn cross_entropy_is_shift_invariant((z, y) in logits(), shift in -20.0f64..20.0) {
        let a = cross_entropy(z.view(), &y).unwrap();
        let b = cross_entropy(z.mapv(|v| v + shift).view(), &y).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn total_loss_is_linear(m in 0.0f64..10.0, d in 0.0f64..10.0, alpha in 0.0f64..3.0, k in 0.0f64..4.0) {
        let cfg = LossConfig { alpha, ..Default::default() };
        prop_assert!((total_loss(k * m, k * d, &cfg) - k * total_loss(m, d, &cfg)).abs() < 1e-12);
        prop_assert!((total_loss(m, d, &cfg) - (0.5 * m + alpha * 0.5 * d)).abs() < 1e-12);
    }

    #[test]
    fn low_data_splits_are_balanced_subsets(classes in 2usize..6, per_class in 4usize..40, pct in 1u32..=100, seed in any::<u64>()) {
        let (train, test) = stratified_split(&index(classes, per_class), "p", seed).unwrap();
        prop_assert!(train.entries.iter().all(|e| test.entries.binary_search(e).is_err()));
        let sub = sample_low_data(&train, pct, seed).unwrap();
        let want = per_class_count(train.per_class_count, pct).unwrap();
        prop_assert_eq!(sub.class_counts(), vec![want; classes]);
        prop_assert!(sub.entries.iter().all(|e| train.entries.binary_search(e).is_ok()));
        prop_assert_eq!(parse_manifest(&render_manifest(&sub), "p").unwrap(), sub.clone());
        prop_assert_eq!(sample_low_data(&train, pct, seed).unwrap(), sub);
    }
}
