use super::*;

fn small_spec() -> ModelSpec {
    ModelSpec {
        feature_length: 8,
        layers: vec![LayerSpec::masked(6, 2, 3, 1), LayerSpec::masked(6, 1, 2, -1)],
        extra_frames: 3,
        dense_width: 5,
        class_count: 4,
        activation: ActivationKind::Prelu,
        allow_zero_order: false,
    }
}

fn segment(spec: &ModelSpec, seed: u64) -> FrameBlock {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FrameBlock::new(Matrix::from_fn(segment_size(spec), spec.feature_length, |_, _| {
        rng.random_range(-1.0..1.0)
    }))
    .unwrap()
}

#[test]
fn segment_size_examples() {
    assert_eq!(segment_size(&ModelSpec::table3(10)), 26);
    let mut spec = ModelSpec::table3(10);
    spec.layers = vec![LayerSpec::unmasked(8, 4); 3];
    spec.extra_frames = 5;
    assert_eq!(segment_size(&spec), 29);
    assert_eq!(frame_plan(&spec).unwrap(), vec![29, 21, 13, 5]);
    spec.layers = vec![LayerSpec::unmasked(8, 1)];
    spec.extra_frames = 1;
    assert_eq!(segment_size(&spec), 3);
    assert_eq!(frame_plan(&ModelSpec::table3(10)).unwrap(), vec![26, 18, 10]);
}

#[test]
fn table3_shapes() {
    let m = TrainedModel::build(&ModelSpec::table3(10), 1).unwrap();
    let l0 = &m.layers()[0];
    assert_eq!((l0.input_width(), l0.hidden_width(), l0.window_len()), (256, 220, 9));
    let l1 = &m.layers()[1];
    assert_eq!((l1.input_width(), l1.hidden_width(), l1.window_len()), (220, 200, 9));
    assert_eq!(m.dense().weights().shape(), (200, 50));
    assert_eq!(m.output_layer().weights().shape(), (50, 10));
    let expected = 9 * 256 * 220 + 220 * 2 + 9 * 220 * 200 + 200 * 2 + 200 * 50 + 50 * 2 + 50 * 10 + 10;
    assert_eq!(m.parameter_count(), expected);
    let total: usize = m.parameters().iter().map(|(_, p)| p.len()).sum();
    assert_eq!(total, expected);
}

#[test]
fn build_is_deterministic_and_masked() {
    let spec = small_spec();
    let a = TrainedModel::build(&spec, 9).unwrap();
    let b = TrainedModel::build(&spec, 9).unwrap();
    let c = TrainedModel::build(&spec, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    for layer in a.layers() {
        let mask = layer.mask().unwrap();
        for w in layer.weights() {
            for (&v, &on) in w.as_slice().iter().zip(mask.cells()) {
                assert!(on || v == 0.0);
            }
        }
    }
    let limit = (6.0f64 / 14.0).sqrt();
    assert!(a.layers()[0].weights()[0].as_slice().iter().all(|v| v.abs() <= limit));
}

#[test]
fn bandwidth_wider_than_input_is_rejected() {
    let mut spec = small_spec();
    spec.layers[0] = LayerSpec::masked(6, 2, 9, 0);
    assert!(matches!(
        TrainedModel::build(&spec, 0),
        Err(ModelError::Mask { layer: 0, .. })
    ));
}

#[test]
fn zero_parameters_give_uniform_output() {
    let spec = small_spec();
    let mut m = TrainedModel::build(&spec, 3).unwrap();
    for p in m.parameters_mut() {
        p.iter_mut().for_each(|v| *v = 0.0);
    }
    let probs = m.forward(&segment(&spec, 1)).unwrap();
    for p in probs {
        assert!((p - 0.25).abs() < 1e-15);
    }
}

#[test]
fn single_class_gives_certainty() {
    let mut spec = small_spec();
    spec.class_count = 1;
    let m = TrainedModel::build(&spec, 3).unwrap();
    assert_eq!(m.forward(&segment(&spec, 2)).unwrap(), vec![1.0]);
}

#[test]
fn wrong_segment_shape_is_rejected() {
    let spec = small_spec();
    let m = TrainedModel::build(&spec, 3).unwrap();
    let short = FrameBlock::new(Matrix::zeros(segment_size(&spec) - 1, 8)).unwrap();
    assert!(matches!(m.forward(&short), Err(ModelError::Segment { .. })));
}

#[test]
fn forward_matches_layer_composition() {
    let spec = small_spec();
    let m = TrainedModel::build(&spec, 5).unwrap();
    let x = segment(&spec, 4);
    let mut block = x.clone();
    for layer in m.layers() {
        block = layer.block_forward(&block).unwrap();
    }
    assert_eq!(block.frames(), spec.extra_frames);
    let pooled = global_mean_pool(&block);
    let hidden = m.dense().forward(&pooled).unwrap();
    let logits = m.output_layer().forward(&hidden).unwrap();
    let expected = softmax(&logits);
    let got = m.forward(&x).unwrap();
    for (a, b) in got.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn target_out_of_range() {
    let spec = small_spec();
    let m = TrainedModel::build(&spec, 5).unwrap();
    assert!(matches!(
        m.loss_and_gradients(&segment(&spec, 1), 4),
        Err(ModelError::TargetOutOfRange { target: 4, classes: 4 })
    ));
}

#[test]
fn gradient_tensors_align_with_parameters() {
    let spec = small_spec();
    let m = TrainedModel::build(&spec, 5).unwrap();
    let (_, g) = m.loss_and_gradients(&segment(&spec, 1), 2).unwrap();
    let params = m.parameters();
    let grads = g.tensors();
    assert_eq!(params.len(), grads.len());
    for ((_, p), g) in params.iter().zip(grads) {
        assert_eq!(p.len(), g.len());
    }
}

#[test]
fn save_load_round_trip() {
    let spec = small_spec();
    let mut m = TrainedModel::build(&spec, 11).unwrap();
    m.labels = (0..4).map(|i| format!("class{i}")).collect();
    m.norm = Some(NormStats {
        mean: vec![0.5; 8],
        std: vec![2.0; 8],
        split: crate::features::SplitTag::Train,
        frame_count: 40,
    });
    let bytes = encode_model(&m);
    let back = decode_model(&bytes).unwrap();
    assert_eq!(back, m);
    let x = segment(&spec, 6);
    assert_eq!(back.forward(&x).unwrap(), m.forward(&x).unwrap());
    assert_eq!(encode_model(&back), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    save_model(&m, &path).unwrap();
    assert_eq!(load_model(&path).unwrap(), m);
}

#[test]
fn truncated_and_corrupt_files_are_rejected() {
    let m = TrainedModel::build(&small_spec(), 11).unwrap();
    let bytes = encode_model(&m);
    for cut in [0, 4, 12, bytes.len() / 2, bytes.len() - 1] {
        assert!(decode_model(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    assert!(matches!(
        decode_model(&bytes[..bytes.len() - 3]),
        Err(LoadError::Truncated { .. })
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert_eq!(decode_model(&bad), Err(LoadError::BadMagic));
    let mut bad = bytes.clone();
    bad[8] = 99;
    assert!(matches!(decode_model(&bad), Err(LoadError::Version { found: 99, .. })));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(decode_model(&extra), Err(LoadError::Corrupt(_))));
}

#[test]
fn tampered_shape_header_is_rejected() {
    let m = TrainedModel::build(&small_spec(), 11).unwrap();
    let mut bytes = encode_model(&m);
    // first tensor header follows the tensor count; it starts with rows = 8
    let first_tensor = bytes.len() - m.parameters().iter().map(|(_, p)| 16 + 8 * p.len()).sum::<usize>();
    assert_eq!(&bytes[first_tensor..first_tensor + 8], &8u64.to_le_bytes());
    bytes[first_tensor..first_tensor + 8].copy_from_slice(&7u64.to_le_bytes());
    assert!(matches!(decode_model(&bytes), Err(LoadError::ShapeInconsistency(_))));
}

#[test]
fn masked_weight_leak_is_rejected() {
    let spec = small_spec();
    let mut m = TrainedModel::build(&spec, 11).unwrap();
    let off = m.layers()[0]
        .mask()
        .unwrap()
        .cells()
        .iter()
        .position(|&on| !on)
        .unwrap();
    m.parameters_mut()[0][off] = 0.5;
    assert!(matches!(decode_model(&encode_model(&m)), Err(LoadError::Corrupt(_))));
}
