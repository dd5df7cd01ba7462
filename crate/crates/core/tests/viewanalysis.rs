use candle_core::{DType, Device, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stainco::channel::Channel;
use stainco::dataio::synth::{generate_synthetic_dataset, SynthConfig};
use stainco::dataio::Split;
use stainco::viewanalysis::{
    independence_report, r_squared, standard_pairs, train_plane_regressor, ChannelRegressionTask,
    RegressionSettings, UNet, UNetSpec,
};
use stainco::{extract_channel, Plane};

/// Textbook two-pass evaluation: mean first, then both sums.
fn two_pass(pred: &[f64], y: &[f64]) -> f64 {
    let mut mean = 0.0;
    for v in y {
        mean += v;
    }
    mean /= y.len() as f64;
    let mut sst = 0.0;
    let mut sse = 0.0;
    for i in 0..y.len() {
        sst += (y[i] - mean).powi(2);
        sse += (pred[i] - y[i]).powi(2);
    }
    1.0 - sse / sst
}

#[test]
fn r_squared_reference_points() {
    let y = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
    assert_eq!(r_squared(&[2.5; 4], &y).unwrap(), 0.0);
    assert!(r_squared(&[4.0, 3.0, 2.0, 1.0], &y).unwrap() < 0.0);
    assert!(r_squared(&[1.0], &[1.0]).is_err());
    assert!(r_squared(&[1.0, 2.0], &y).is_err());
    assert!(r_squared(&[], &[]).is_err());
}

#[test]
fn tasks_need_distinct_channels() {
    assert!(ChannelRegressionTask::new(Channel::H, Channel::H, RegressionSettings::default()).is_err());
    let t = ChannelRegressionTask::new(Channel::H, Channel::E, RegressionSettings::default()).unwrap();
    assert_eq!(t.label(), "H ⇒ E");
    let pairs = standard_pairs();
    assert_eq!(pairs.len(), 8);
    assert!(pairs.iter().all(|(a, b)| a != b));
    let bad = RegressionSettings {
        epochs: 0,
        ..RegressionSettings::default()
    };
    assert!(bad.validate().is_err());
    assert!(UNetSpec { width: 4, depth: 0 }.validate().is_err());
}

#[test]
fn regressor_keeps_the_spatial_shape() {
    let net = UNet::new(UNetSpec { width: 4, depth: 3 }, 1, 0).unwrap();
    let x = Tensor::zeros((2, 1, 16, 12), DType::F32, &Device::Cpu).unwrap();
    assert_eq!(net.forward(&x).unwrap().dims(), [2, 1, 16, 12]);
    let odd = Tensor::zeros((2, 1, 15, 12), DType::F32, &Device::Cpu).unwrap();
    assert!(net.forward(&odd).is_err());
}

fn planes(channel: Channel, split: Split, n: usize) -> Vec<Plane> {
    let dataset = generate_synthetic_dataset(&SynthConfig::new(n, 24, 5)).unwrap();
    dataset.subset(split).tiles.iter().map(|t| extract_channel(t, channel)).collect()
}

fn noise(count: usize, seed: u64) -> Vec<Plane> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| Plane::new(24, 24, (0..576).map(|_| rng.random::<f32>()).collect()).unwrap())
        .collect()
}

fn quick() -> RegressionSettings {
    RegressionSettings {
        epochs: 20,
        batch_size: 8,
        lr: 1e-2,
        ..RegressionSettings::default()
    }
}

#[test]
fn identity_is_learnable() {
    let train = planes(Channel::H, Split::Train, 600);
    let val = planes(Channel::H, Split::Val, 600);
    let (_, entry) = train_plane_regressor((&train, &train), (&val, &val), &quick()).unwrap();
    assert!(entry.r2 >= 0.99, "identity R² {}", entry.r2);
    assert_eq!(entry.curve.len(), 20);
    let best = entry.curve.iter().map(|c| c.val_mse).fold(f64::INFINITY, f64::min);
    assert_eq!(entry.val_mse, best);
}

#[test]
fn noise_is_not_learnable() {
    let train = planes(Channel::H, Split::Train, 600);
    let val = planes(Channel::H, Split::Val, 600);
    let (ty, vy) = (noise(train.len(), 1), noise(val.len(), 2));
    let (_, entry) = train_plane_regressor((&train, &ty), (&val, &vy), &quick()).unwrap();
    assert!(entry.r2.abs() <= 0.05, "noise R² {}", entry.r2);
}

#[test]
fn report_lookup_and_files() {
    let dataset = generate_synthetic_dataset(&SynthConfig::new(120, 24, 5)).unwrap();
    let settings = RegressionSettings {
        epochs: 1,
        ..RegressionSettings::default()
    };
    let task = |i, t| ChannelRegressionTask::new(i, t, settings.clone()).unwrap();
    let tasks = vec![
        task(Channel::H, Channel::E),
        task(Channel::R, Channel::G),
        task(Channel::H, Channel::E),
    ];
    let train = dataset.subset(Split::Train).tiles;
    let val = dataset.subset(Split::Val).tiles;
    let report = independence_report(&tasks, &train, &val).unwrap();
    assert_eq!(report.entries.len(), 2);
    assert!(report.get(Channel::H, Channel::E).is_some());
    assert!(report.get(Channel::E, Channel::H).is_none());
    assert!(report.entries.iter().all(|e| e.r2 <= 1.0));
    assert!(report.to_csv().starts_with("input,target,r2,best_epoch,val_mse\n"));
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(report.write(dir.path()).unwrap().len(), 3);
}

proptest! {
    #[test]
    fn r_squared_matches_two_pass(
        pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..200)
    ) {
        let (pred, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let spread = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - y.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let expected = two_pass(&pred, &y);
        let got = r_squared(&pred, &y).unwrap();
        prop_assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0));
        prop_assert!(got <= 1.0);
    }
}
