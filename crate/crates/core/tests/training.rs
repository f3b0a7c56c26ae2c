use std::collections::BTreeMap;

use proptest::prelude::*;
use tumorseg::model::{build_network, NetworkConfig, Parameters};
use tumorseg::preprocess::GrayImage;
use tumorseg::training::*;
use tumorseg::Error;

fn tiny_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        epochs,
        seed: 11,
        network: NetworkConfig::improved(4, 2),
        ..Default::default()
    }
}

fn multiset(ds: &Dataset) -> BTreeMap<Vec<u8>, usize> {
    let mut m = BTreeMap::new();
    for (img, mask) in ds.items() {
        let mut key = img.pixels().to_vec();
        key.extend_from_slice(mask.pixels());
        *m.entry(key).or_insert(0) += 1;
    }
    m
}

#[test]
fn split_seven_three() {
    let ds = synth_dataset(10, 16, 3);
    let (train, val) = ds.split(SplitRatio::default(), 5).unwrap();
    assert_eq!((train.len(), val.len()), (7, 3));
    let (train2, val2) = ds.split(SplitRatio::default(), 5).unwrap();
    assert_eq!((&train, &val), (&train2, &val2));

    let mut joined = multiset(&train);
    for (k, c) in multiset(&val) {
        *joined.entry(k).or_insert(0) += c;
    }
    assert_eq!(joined, multiset(&ds));
}

#[test]
fn split_needs_two_items() {
    let ds = synth_dataset(1, 16, 3);
    assert!(matches!(ds.split(SplitRatio::default(), 0), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_partitions(n in 2usize..40, seed in any::<u64>()) {
        let items: Vec<_> = (0..n)
            .map(|i| {
                let img = GrayImage::filled(4, 4, i as u8).unwrap();
                (img, GrayImage::filled(4, 4, 0).unwrap())
            })
            .collect();
        let ds = Dataset::new(items).unwrap();
        let (train, val) = ds.split(SplitRatio::default(), seed).unwrap();
        prop_assert_eq!(train.len(), (n * 7 / 10).clamp(1, n - 1));
        let mut ids: Vec<u8> = train.items().iter().chain(val.items()).map(|(img, _)| img.get(0, 0)).collect();
        ids.sort();
        prop_assert_eq!(ids, (0..n as u8).collect::<Vec<_>>());
    }
}

#[test]
fn synthetic_masks() {
    let ds = synth_dataset(60, 64, 42);
    for (img, mask) in ds.items() {
        assert_eq!((img.width(), img.height()), (64, 64));
        assert!(mask.pixels().iter().all(|&v| v == 0 || v == 255));
        let frac = mask.pixels().iter().filter(|&&v| v == 255).count() as f64 / 4096.0;
        assert!((MIN_FOREGROUND..=MAX_FOREGROUND).contains(&frac), "fraction {frac}");
        let mean = |fg: bool| {
            let v: Vec<f64> = img
                .pixels()
                .iter()
                .zip(mask.pixels())
                .filter(|(_, &m)| (m == 255) == fg)
                .map(|(&p, _)| p as f64)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(true) > mean(false) + 40.0, "tumor should be brighter");
    }
    assert_eq!(ds, synth_dataset(60, 64, 42));
}

#[test]
fn dataset_rejects_bad_items() {
    let img = GrayImage::filled(4, 4, 0).unwrap();
    let grey_mask = GrayImage::filled(4, 4, 7).unwrap();
    assert!(matches!(Dataset::new(vec![(img.clone(), grey_mask)]), Err(Error::NonBinaryMask(7))));
    let small = GrayImage::filled(2, 4, 0).unwrap();
    assert!(matches!(Dataset::new(vec![(img, small)]), Err(Error::ShapeMismatch(_))));
    assert!(Dataset::new(Vec::new()).is_err());
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(5, 16, 9);
    ds.save_dir(dir.path()).unwrap();
    assert!(dir.path().join("img_0004.pgm").exists());
    assert!(dir.path().join("mask_0000.pgm").exists());
    assert_eq!(Dataset::load_dir(dir.path()).unwrap(), ds);
}

#[test]
fn batches_are_scaled() {
    let ds = synth_dataset(3, 16, 1);
    let (x, y) = ds.batch::<f64>(&[2, 0]);
    assert_eq!(x.shape(), &[2, 1, 16, 16]);
    assert_eq!(x.data()[0], ds.items()[2].0.pixels()[0] as f64 / 255.0);
    assert!(y.data().iter().all(|&v| v == 0.0 || v == 1.0));
}

#[test]
fn adam_is_deterministic() {
    let run = || {
        let (mut p, _) = build_network::<f32>(&NetworkConfig::baseline(4, 1), 3).unwrap();
        let mut s = OptimizerState::new(&p);
        for k in 0..4 {
            let names: Vec<String> = p.names().iter().map(|n| n.to_string()).collect();
            for (j, name) in names.iter().enumerate() {
                let t = p.get_mut(name).unwrap();
                let g: Vec<f32> = (0..t.numel()).map(|i| ((i + j + k) % 7) as f32 - 3.0).collect();
                t.accumulate_grad(&g);
            }
            adam_step(&mut p, &mut s, 0.01).unwrap();
        }
        p
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let (init, _) = build_network::<f32>(&NetworkConfig::baseline(4, 1), 3).unwrap();
    assert_ne!(a.get("enc0.conv1.weight").unwrap().data(), init.get("enc0.conv1.weight").unwrap().data());
    assert!(a.iter().zip(init.iter()).all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape()));
}

#[test]
fn single_epoch_smoke() {
    let ds = synth_dataset(8, 16, 2);
    let out = train(&ds, &tiny_cfg(1)).unwrap();
    assert_eq!(out.records.len(), 1);
    let r = out.records[0];
    assert_eq!(r.epoch, 1);
    assert!(r.train_loss.is_finite() && r.val_loss.is_finite());
    assert!(r.train_loss >= 0.0 && r.val_loss >= 0.0);
    assert!((0.0..=1.0).contains(&r.val_miou));
}

#[test]
fn training_is_bitwise_reproducible() {
    let ds = synth_dataset(10, 16, 4);
    let a = train(&ds, &tiny_cfg(3)).unwrap();
    let b = train(&ds, &tiny_cfg(3)).unwrap();
    let bits = |rs: &[EpochRecord]| -> Vec<[u64; 3]> {
        rs.iter()
            .map(|r| [r.train_loss.to_bits(), r.val_loss.to_bits(), r.val_miou.to_bits()])
            .collect()
    };
    assert_eq!(bits(&a.records), bits(&b.records));
    assert_eq!(a.params, b.params);
    assert_eq!(metrics_csv(&a.records), metrics_csv(&b.records));
}

#[test]
fn train_loss_halves_at_desk_scale() {
    let ds = synth_dataset(64, 64, 21);
    let cfg = TrainConfig {
        batch_size: 32,
        epochs: 50,
        seed: 21,
        network: NetworkConfig::baseline(8, 2),
        ..Default::default()
    };
    let out = train(&ds, &cfg).unwrap();
    let first = out.records[0].train_loss;
    let last = out.records.last().unwrap().train_loss;
    assert!(last < 0.5 * first, "epoch 1 {first}, epoch 50 {last}");
}

#[test]
fn config_errors() {
    let ds = synth_dataset(4, 16, 2);
    let mut cfg = tiny_cfg(1);
    cfg.learning_rate = 0.0;
    assert!(matches!(train(&ds, &cfg), Err(Error::Config(_))));
    let mut cfg = tiny_cfg(1);
    cfg.batch_size = 0;
    assert!(matches!(train(&ds, &cfg), Err(Error::Config(_))));
    let mut cfg = tiny_cfg(1);
    cfg.network.depth = 5;
    assert!(matches!(train(&ds, &cfg), Err(Error::Config(_))));
}

#[test]
fn csv_layout() {
    let records = [
        EpochRecord { epoch: 1, train_loss: 1.5, val_loss: 1.25, val_miou: 0.4 },
        EpochRecord { epoch: 2, train_loss: 0.1234567, val_loss: 1.0 / 3.0, val_miou: 0.75 },
    ];
    assert_eq!(
        metrics_csv(&records),
        "epoch,train_loss,val_loss,val_miou\n1,1.500000,1.250000,0.400000\n2,0.123457,0.333333,0.750000\n"
    );
}

fn trained_params() -> (Parameters<f32>, NetworkConfig) {
    let cfg = tiny_cfg(1);
    let out = train(&synth_dataset(6, 16, 8), &cfg).unwrap();
    (out.params, cfg.network)
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let (params, net_cfg) = trained_params();
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.tsn");
    let second = dir.path().join("b.tsn");
    save_checkpoint(&params, &net_cfg, &first).unwrap();
    let (loaded, cfg) = load_checkpoint(&first).unwrap();
    assert_eq!(cfg, net_cfg);
    save_checkpoint(&loaded, &cfg, &second).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    for ((n1, t1), (n2, t2)) in params.iter().zip(loaded.iter()) {
        assert_eq!(n1, n2);
        assert_eq!(t1.shape(), t2.shape());
        let bits = |t: &[f32]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(t1.data()), bits(t2.data()));
    }

    let net = tumorseg::model::UNet::new(cfg).unwrap();
    let (x, _) = synth_dataset(2, 16, 99).batch::<f32>(&[0, 1]);
    let before = net.predict(&params, &x).unwrap();
    let after = net.predict(&loaded, &x).unwrap();
    let bits = |t: &[f32]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(before.data()), bits(after.data()));
}

#[test]
fn checkpoint_layout() {
    let (params, cfg) = trained_params();
    let bytes = encode_checkpoint(&params, &cfg);
    assert_eq!(&bytes[..4], b"TSN1");
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header = std::str::from_utf8(&bytes[8..8 + header_len]).unwrap();
    assert!(header.contains("depth=2\n"));
    let rest = &bytes[8 + header_len..];
    let name_len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    assert_eq!(&rest[4..4 + name_len], params.names()[0].as_bytes());
    let floats = params.scalar_count() * 4;
    assert!(bytes.len() > floats + 8 + header_len);
}

#[test]
fn truncated_checkpoint_is_a_format_error() {
    let (params, cfg) = trained_params();
    let bytes = encode_checkpoint(&params, &cfg);
    for cut in [0, 3, 6, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Format(_))),
            "cut at {cut}"
        );
    }
    // a cut exactly between two parameters
    let mut boundary = 8 + cfg.to_key_values().len();
    let (name, t) = params.iter().next().unwrap();
    boundary += 4 + name.len() + 4 + 4 * t.shape().len() + 4 * t.numel();
    assert!(matches!(decode_checkpoint(&bytes[..boundary]), Err(Error::Format(_))));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));
}

#[test]
fn mismatched_config() {
    let (params, cfg) = trained_params();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tsn");
    save_checkpoint(&params, &cfg, &path).unwrap();
    let other = NetworkConfig::baseline(4, 2);
    assert!(matches!(load_checkpoint_into(&path, &other), Err(Error::ConfigMismatch(_))));
    assert!(load_checkpoint_into(&path, &cfg).is_ok());

    // parameters that do not fit the stored header
    let wrong = encode_checkpoint(&params, &other);
    assert!(matches!(decode_checkpoint(&wrong), Err(Error::ConfigMismatch(_))));

    assert!(matches!(load_checkpoint(dir.path().join("missing.tsn")), Err(Error::Io { .. })));
}
