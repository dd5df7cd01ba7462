use std::collections::HashMap;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stainco::channel::Channel;
use stainco::dataio::augment::Standardization;
use stainco::model::im2col;
use stainco::model::variant::{load_pretrained, select_first_layer_channels};
use stainco::model::{
    adapt_first_layer, build_variant, load_checkpoint, read_checkpoint_meta, save_checkpoint, Architecture,
    CheckpointMeta, EncoderSpec, VariantKind,
};

fn tiny(in_channels: usize) -> EncoderSpec {
    EncoderSpec::new(Architecture::ResnetTiny { width: 8 }, in_channels)
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn max_rel(a: &Tensor, b: &Tensor) -> f64 {
    let a: Vec<f64> = a.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    let b: Vec<f64> = b.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs() / scale))
}

#[test]
fn adapted_first_layer_matches_on_gray_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let kernels = random(&[8, 3, 7, 7], &mut rng);
    let adapted = adapt_first_layer(&kernels).unwrap();
    assert_eq!(adapted.dims(), [8, 1, 7, 7]);
    for _ in 0..20 {
        let gray = random(&[1, 1, 16, 16], &mut rng);
        let rgb = Tensor::cat(&[&gray, &gray, &gray], 1).unwrap();
        let full = rgb.conv2d(&kernels, 3, 2, 1, 1).unwrap();
        let one = gray.conv2d(&adapted, 3, 2, 1, 1).unwrap();
        assert!(max_rel(&one, &full) < 1e-12);
    }
}

#[test]
fn im2col_convolution_agrees_with_the_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[2, 3, 11, 11], &mut rng).to_dtype(DType::F32).unwrap();
    let w = random(&[5, 3, 3, 3], &mut rng).to_dtype(DType::F32).unwrap();
    for (stride, padding) in [(1, 1), (2, 1), (1, 0)] {
        let ours = im2col::conv2d(&x, &w, stride, padding).unwrap();
        let reference = x.conv2d(&w, padding, stride, 1, 1).unwrap();
        assert_eq!(ours.dims(), reference.dims());
        assert!(max_rel(&ours, &reference) < 1e-5);
    }
}

#[test]
fn adaptation_rejects_other_shapes() {
    let t = Tensor::zeros((4, 2, 3, 3), DType::F32, &Device::Cpu).unwrap();
    assert!(adapt_first_layer(&t).is_err());
    let t = Tensor::zeros((4, 3, 3), DType::F32, &Device::Cpu).unwrap();
    assert!(adapt_first_layer(&t).is_err());
    let t = Tensor::zeros((4, 3, 3, 3), DType::F32, &Device::Cpu).unwrap();
    assert!(select_first_layer_channels(&t, &[0, 3]).is_err());
    assert_eq!(select_first_layer_channels(&t, &[0, 2]).unwrap().dims(), [4, 2, 3, 3]);
}

#[test]
fn pretrained_weights_are_adapted_per_branch() {
    let rgb = build_variant(&VariantKind::RgbBaseline, &tiny(3), 1).unwrap();
    let prefix = format!("{}.encoder.", rgb.branches()[0].name);
    let weights: HashMap<String, Tensor> = rgb
        .params()
        .snapshot()
        .unwrap()
        .into_iter()
        .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|s| (s.to_string(), v)))
        .collect();
    let stem = weights["conv1.weight"].clone();

    let dual = build_variant(&VariantKind::DualHeCotrain, &tiny(1), 2).unwrap();
    load_pretrained(&dual, &weights).unwrap();
    let expected = adapt_first_layer(&stem).unwrap();
    for branch in dual.branches() {
        let got = &branch.encoder.first_conv().weight;
        assert_eq!(max_rel(got, &expected), 0.0);
    }

    let rb = build_variant(
        &VariantKind::TwoChannelBaseline {
            channels: [Channel::R, Channel::B],
        },
        &tiny(2),
        2,
    )
    .unwrap();
    load_pretrained(&rb, &weights).unwrap();
    let expected = select_first_layer_channels(&stem, &[0, 2]).unwrap();
    assert_eq!(max_rel(&rb.branches()[0].encoder.first_conv().weight, &expected), 0.0);

    let mut partial = weights.clone();
    partial.remove("conv1.weight");
    assert!(load_pretrained(&dual, &partial).is_err());
}

#[test]
fn branch_layout_and_parameter_counts() {
    let he = build_variant(&VariantKind::DualHeCotrain, &tiny(1), 0).unwrap();
    let h = build_variant(&VariantKind::HOnly, &tiny(1), 0).unwrap();
    let rgb = build_variant(&VariantKind::RgbBaseline, &tiny(3), 0).unwrap();
    assert_eq!(he.branches().len(), 2);
    assert_eq!(he.branches()[0].channels, [Channel::H]);
    assert_eq!(he.branches()[1].channels, [Channel::E]);
    assert_eq!(he.branch_parameter_count(0), he.branch_parameter_count(1));
    assert_eq!(he.branch_parameter_count(0), h.branch_parameter_count(0));
    // Only the stem differs: two extra input planes of 8 kernels of 3×3.
    assert_eq!(rgb.branch_parameter_count(0) - h.branch_parameter_count(0), 2 * 8 * 9);
    // The head is shared and sized D × 2 + 2.
    assert_eq!(he.head_parameter_count(), 32 * 2 + 2);
    assert_eq!(
        he.trainable_count(),
        2 * he.branch_parameter_count(0) + he.head_parameter_count()
    );
}

#[test]
fn spec_validation() {
    assert!(EncoderSpec::new(Architecture::ResnetTiny { width: 8 }, 0).validate().is_err());
    assert!(EncoderSpec::new(Architecture::ResnetTiny { width: 8 }, 4).validate().is_err());
    assert!(EncoderSpec::new(Architecture::ResnetTiny { width: 0 }, 1).validate().is_err());
    let mut spec = tiny(1);
    spec.feature_dim = 31;
    assert!(spec.validate().is_err());
    assert_eq!(EncoderSpec::new(Architecture::Resnet18, 3).feature_dim, 512);
    // A variant whose channel count disagrees with the encoder is refused.
    assert!(build_variant(&VariantKind::RgbBaseline, &tiny(1), 0).is_err());
    let repeated = VariantKind::DualChannelPairCotrain {
        channels: [Channel::G, Channel::G],
    };
    assert!(build_variant(&repeated, &tiny(1), 0).is_err());
}

#[test]
fn forward_shapes_and_probabilities() {
    let model = build_variant(&VariantKind::DualHeCotrain, &tiny(1), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = random(&[4, 1, 24, 24], &mut rng).to_dtype(DType::F32).unwrap();
    let e = random(&[4, 1, 24, 24], &mut rng).to_dtype(DType::F32).unwrap();
    let dual = model.forward_dual(&h, &e, true).unwrap();
    assert_eq!(dual.f_h.dims(), [4, 32]);
    assert_eq!(dual.f_e.dims(), [4, 32]);
    let p = model.predict_proba(&[h.clone(), e.clone()]).unwrap();
    let rows: Vec<Vec<f32>> = p.to_vec2().unwrap();
    for row in rows {
        assert_eq!(row.len(), 2);
        assert!((row[0] + row[1] - 1.0).abs() < 1e-6);
    }
    let wrong = random(&[4, 1, 20, 20], &mut rng).to_dtype(DType::F32).unwrap();
    assert!(model.features(&[h.clone(), wrong], false).is_err());
    assert!(model.features(&[h], false).is_err());
}

#[test]
fn initialization_depends_only_on_the_seed() {
    let a = build_variant(&VariantKind::HOnly, &tiny(1), 9).unwrap().params().snapshot().unwrap();
    let b = build_variant(&VariantKind::HOnly, &tiny(1), 9).unwrap().params().snapshot().unwrap();
    let c = build_variant(&VariantKind::HOnly, &tiny(1), 10).unwrap().params().snapshot().unwrap();
    let bits = |m: &std::collections::BTreeMap<String, Tensor>| -> Vec<u32> {
        m.values()
            .flat_map(|t| t.flatten_all().unwrap().to_vec1::<f32>().unwrap())
            .map(f32::to_bits)
            .collect()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested").join("best.ckpt");
    let kind = VariantKind::DualHeCotrain;
    let model = build_variant(&kind, &tiny(1), 11).unwrap();

    // Move running statistics away from their initial values first.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = random(&[6, 1, 16, 16], &mut rng).to_dtype(DType::F32).unwrap();
    let e = random(&[6, 1, 16, 16], &mut rng).to_dtype(DType::F32).unwrap();
    model.forward_dual(&h, &e, true).unwrap();

    let meta = CheckpointMeta {
        variant: kind.clone(),
        encoder: tiny(1),
        standardization: Standardization::identity(),
        input_size: 16,
        config_hash: "abc123".into(),
        seed: 11,
        epoch: 4,
    };
    save_checkpoint(&path, &model, &meta).unwrap();
    assert_eq!(read_checkpoint_meta(&path).unwrap(), meta);
    let (loaded, loaded_meta) = load_checkpoint(&path).unwrap();
    assert_eq!(loaded_meta, meta);

    let before = model.params().snapshot().unwrap();
    let after = loaded.params().snapshot().unwrap();
    assert_eq!(before.keys().collect::<Vec<_>>(), after.keys().collect::<Vec<_>>());
    for (name, t) in &before {
        let x: Vec<u32> = t.flatten_all().unwrap().to_vec1::<f32>().unwrap().into_iter().map(f32::to_bits).collect();
        let y: Vec<u32> = after[name]
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap()
            .into_iter()
            .map(f32::to_bits)
            .collect();
        assert_eq!(x, y, "{name}");
    }
    let p0: Vec<Vec<f32>> = model.predict_proba(&[h.clone(), e.clone()]).unwrap().to_vec2().unwrap();
    let p1: Vec<Vec<f32>> = loaded.predict_proba(&[h, e]).unwrap().to_vec2().unwrap();
    assert_eq!(p0, p1);
}

#[test]
fn checkpoint_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    assert!(load_checkpoint(&path).is_err());
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(load_checkpoint(&path).is_err());

    let model = build_variant(&VariantKind::HOnly, &tiny(1), 0).unwrap();
    let meta = CheckpointMeta {
        variant: VariantKind::EOnly,
        encoder: tiny(1),
        standardization: Standardization::identity(),
        input_size: 16,
        config_hash: String::new(),
        seed: 0,
        epoch: 0,
    };
    assert!(save_checkpoint(&path, &model, &meta).is_err());
}
