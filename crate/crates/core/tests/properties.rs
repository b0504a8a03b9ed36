use mclnn::dataset::{make_folds, segment_clip, segment_count, ClipEntry, SplitPlan};
use mclnn::features::{decode_features, encode_features, FeatureMatrix};
use mclnn::layers::{global_mean_pool, ActivationKind};
use mclnn::mask::{apply_mask, generate_linear_indices, generate_mask};
use mclnn::model::{decode_model, encode_model, frame_plan, segment_size};
use mclnn::training::vote;
use mclnn::{ClnnLayer, FrameBlock, LayerSpec, MaskSpec, Matrix, ModelSpec, TrainedModel};
use proptest::prelude::*;

fn mask_spec() -> impl Strategy<Value = MaskSpec> {
    (1usize..40, 1usize..40)
        .prop_flat_map(|(l, e)| (Just(l), Just(e), 1..=l))
        .prop_flat_map(|(l, e, bw)| (Just(l), Just(e), Just(bw), -(bw as i64)..bw as i64))
        .prop_map(|(l, e, bw, ov)| MaskSpec::new(l, e, bw, ov).unwrap())
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-10.0f64..10.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

proptest! {
    #[test]
    fn mask_count_law(spec in mask_spec()) {
        let cells = spec.cell_count();
        let stride = spec.stride();
        let full = cells / stride;
        let expected = full * spec.bandwidth() + (cells - full * stride).min(spec.bandwidth());
        prop_assert_eq!(generate_mask(&spec).ones(), expected);
    }

    #[test]
    fn mask_ones_sit_at_band_offsets(spec in mask_spec()) {
        let idx = generate_linear_indices(&spec);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx.iter().all(|&lx| lx % spec.stride() < spec.bandwidth()));
        let mask = generate_mask(&spec);
        let l = spec.feature_length();
        for lx in idx {
            prop_assert!(mask.get(lx % l, lx / l));
        }
    }

    #[test]
    fn column_runs_never_exceed_bandwidth(spec in mask_spec()) {
        let mask = generate_mask(&spec);
        for c in 0..mask.cols() {
            let mut run = 0;
            for r in 0..mask.rows() {
                run = if mask.get(r, c) { run + 1 } else { 0 };
                prop_assert!(run <= spec.bandwidth());
            }
        }
    }

    #[test]
    fn apply_mask_is_idempotent(spec in mask_spec().prop_filter("small", |s| s.cell_count() <= 400), seed in any::<u64>()) {
        let w = Matrix::from_fn(spec.feature_length(), spec.hidden_width(), |r, c| {
            ((seed.wrapping_mul(r as u64 + 1).wrapping_add(c as u64 * 7919)) % 1000) as f64 - 500.0
        });
        let mask = generate_mask(&spec);
        let once = apply_mask(&w, &mask).unwrap();
        prop_assert_eq!(apply_mask(&once, &mask).unwrap(), once);
    }

    #[test]
    fn layer_shrinks_by_twice_the_order(order in 1usize..4, extra in 0usize..6, l in 1usize..6, e in 1usize..6) {
        let layer = ClnnLayer::zeros(order, l, e, None, ActivationKind::Linear).unwrap();
        let frames = 2 * order + 1 + extra;
        let block = FrameBlock::new(Matrix::filled(frames, l, 1.0)).unwrap();
        prop_assert_eq!(layer.block_forward(&block).unwrap().frames(), frames - 2 * order);
    }

    #[test]
    fn frame_plan_is_consistent(orders in prop::collection::vec(1usize..5, 1..5), k in 1usize..8) {
        let spec = ModelSpec {
            feature_length: 4,
            layers: orders.iter().map(|&n| LayerSpec::unmasked(4, n)).collect(),
            extra_frames: k,
            dense_width: 3,
            class_count: 2,
            activation: ActivationKind::Prelu,
            allow_zero_order: false,
        };
        let plan = frame_plan(&spec).unwrap();
        prop_assert_eq!(plan.len(), orders.len() + 1);
        prop_assert_eq!(plan[0], segment_size(&spec));
        prop_assert_eq!(*plan.last().unwrap(), k);
        for (w, n) in plan.windows(2).zip(&orders) {
            prop_assert_eq!(w[0] - w[1], 2 * n);
        }
    }

    #[test]
    fn segment_count_matches_enumeration(frames in 1usize..80, q in 1usize..30, hop in 1usize..10) {
        let starts = (0..frames).step_by(hop).filter(|s| s + q <= frames).count();
        prop_assert_eq!(segment_count(frames, q, hop), starts);
        let fm = FeatureMatrix::new(Matrix::zeros(frames, 2), "c", Some(0)).unwrap();
        let seg = segment_clip(&fm, q, hop).unwrap();
        prop_assert_eq!(seg.segments.len(), starts);
        prop_assert_eq!(seg.warning.is_some(), starts == 0);
        prop_assert!(seg.segments.iter().all(|s| s.frames.frames() == q));
    }

    #[test]
    fn vote_ignores_segment_order(
        probs in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), 1..20),
        rotate in 0usize..20,
    ) {
        let mut shuffled = probs.clone();
        shuffled.reverse();
        let n = shuffled.len();
        shuffled.rotate_left(rotate % n);
        prop_assert_eq!(vote(&probs).unwrap(), vote(&shuffled).unwrap());
    }

    #[test]
    fn mean_pool_is_linear(x in matrix(5, 3), y in matrix(5, 3), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let combo = Matrix::from_fn(5, 3, |r, c| a * x[(r, c)] + b * y[(r, c)]);
        let px = global_mean_pool(&FrameBlock::new(x).unwrap());
        let py = global_mean_pool(&FrameBlock::new(y).unwrap());
        let pc = global_mean_pool(&FrameBlock::new(combo).unwrap());
        for j in 0..3 {
            prop_assert!((pc[j] - (a * px[j] + b * py[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_files_round_trip(m in matrix(7, 4), label in prop::option::of(0usize..5)) {
        let fm = FeatureMatrix::new(m, "genre/clip 1", label).unwrap();
        prop_assert_eq!(decode_features(&encode_features(&fm)).unwrap(), fm);
    }

    #[test]
    fn model_files_round_trip(seed in any::<u64>(), classes in 1usize..5) {
        let spec = ModelSpec {
            feature_length: 6,
            layers: vec![LayerSpec::masked(5, 1, 2, 0)],
            extra_frames: 2,
            dense_width: 3,
            class_count: classes,
            activation: ActivationKind::Prelu,
            allow_zero_order: false,
        };
        let model = TrainedModel::build(&spec, seed).unwrap();
        let bytes = encode_model(&model);
        prop_assert_eq!(encode_model(&decode_model(&bytes).unwrap()), bytes);
    }

    #[test]
    fn fold_plans_round_trip(per_class in 3usize..12, folds in 2usize..4, seed in any::<u64>()) {
        let clips: Vec<ClipEntry> = ["a", "b"]
            .iter()
            .flat_map(|c| (0..per_class).map(move |i| ClipEntry { id: format!("{c}/{i}"), class: c.to_string() }))
            .collect();
        let plan = make_folds(&clips, folds, seed).unwrap();
        prop_assert_eq!(plan.len(), clips.len());
        prop_assert_eq!(SplitPlan::parse(&plan.to_text()).unwrap(), plan);
    }
}
