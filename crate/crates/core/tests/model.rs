//! Weight-map network: output contract, learned fusion and checkpoints.

mod common;

use hdrfuse::model::{pair_tensor, FusionModel, ModelConfig};
use hdrfuse::nn::checkpoint;
use hdrfuse::{Error, ExposurePair};
use rand::Rng;

fn calibrated(seed: u64) -> FusionModel<f32> {
    let mut model = FusionModel::<f32>::build(&ModelConfig::default(), seed).unwrap();
    let mut rng = common::rng(seed ^ 0xabc);
    let pairs: Vec<ExposurePair> = (0..3).map(|_| common::random_pair(&mut rng, 32, 32, 3)).collect();
    model.calibrate_batch_norm(&pair_tensor(&pairs, 32, 32).unwrap()).unwrap();
    model
}

#[test]
fn weights_are_normalized_on_random_pairs() {
    let model = calibrated(1);
    let mut rng = common::rng(1);
    for _ in 0..50 {
        let (h, w) = (rng.gen_range(4..40), rng.gen_range(4..40));
        let pair = common::random_pair(&mut rng, h, w, 3);
        let wmap = model.predict_weights(&pair).unwrap();
        assert_eq!((wmap.height(), wmap.width(), wmap.n_exposures()), (h, w, 2));
        for px in 0..h * w {
            let (a, b) = (wmap.weight(0, px), wmap.weight(1, px));
            assert!(a >= 0.0 && b >= 0.0);
            assert!((a + b - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn shape_is_preserved() {
    let model = calibrated(2);
    let mut rng = common::rng(2);
    for (h, w) in [(48, 32), (16, 16), (64, 48), (17, 33)] {
        let pair = common::random_pair(&mut rng, h, w, 3);
        let wmap = model.predict_weights(&pair).unwrap();
        assert_eq!((wmap.height(), wmap.width()), (h, w));
        let fused = model.fuse(&pair).unwrap();
        assert_eq!((fused.height(), fused.width(), fused.channels()), (h, w, 3));
    }
}

#[test]
fn identical_inputs_give_deterministic_normalized_weights() {
    let model = calibrated(3);
    let mut rng = common::rng(3);
    let img = common::random_image(&mut rng, 24, 24, 3);
    let pair = ExposurePair::new(img.clone(), img.clone()).unwrap();
    let a = model.predict_weights(&pair).unwrap();
    let b = model.predict_weights(&pair).unwrap();
    assert_eq!(a, b);
    // any convex combination of identical images is the image itself
    let fused = model.fuse(&pair).unwrap();
    for (x, y) in fused.data().iter().zip(img.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn learned_fusion_is_convex() {
    let mut rng = common::rng(4);
    for seed in 0..5 {
        let model = calibrated(seed + 10);
        let pair = common::random_pair(&mut rng, 20, 20, 3);
        let fused = model.fuse(&pair).unwrap();
        for i in 0..fused.data().len() {
            let (u, o) = (pair.under().data()[i], pair.over().data()[i]);
            assert!(fused.data()[i] >= u.min(o) - 1e-12 && fused.data()[i] <= u.max(o) + 1e-12);
        }
    }
}

/// Driving the final logits far apart makes the softmax exactly one-hot, so
/// the fusion must reproduce the under-exposed input sample for sample.
#[test]
fn one_hot_weights_select_the_under_exposure() {
    let mut model = calibrated(5);
    let net = model.network_mut();
    let last_conv = net
        .params()
        .iter()
        .rposition(|p| p.name.ends_with(".weight"))
        .unwrap();
    net.params_mut()[last_conv].tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
    net.params_mut()[last_conv + 1].tensor.data_mut().copy_from_slice(&[1000.0, -1000.0]);
    let mut rng = common::rng(5);
    let pair = common::random_pair(&mut rng, 16, 16, 3);
    let fused = model.fuse(&pair).unwrap();
    assert_eq!(fused.data(), pair.under().data());
}

#[test]
fn uninitialized_batch_norm_is_rejected() {
    let model = FusionModel::<f32>::build(&ModelConfig::default(), 6).unwrap();
    let mut rng = common::rng(6);
    let pair = common::random_pair(&mut rng, 16, 16, 3);
    assert!(matches!(model.predict_weights(&pair), Err(Error::UninitializedBatchNorm(_))));
}

#[test]
fn checkpoint_round_trip_reproduces_weight_maps_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let model = calibrated(7);
    model.save(&path).unwrap();
    let loaded = FusionModel::<f32>::load(&path).unwrap();
    assert_eq!(&loaded, &model);
    let mut rng = common::rng(7);
    for _ in 0..5 {
        let pair = common::random_pair(&mut rng, 24, 40, 3);
        let a = model.predict_weights(&pair).unwrap();
        let b = loaded.predict_weights(&pair).unwrap();
        for n in 0..2 {
            let bits = |m: &hdrfuse::WeightMap| m.plane(n).data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b));
        }
    }
    // same bytes when saved again
    let again = dir.path().join("again.ckpt");
    loaded.save(&again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn checkpoint_header_layout() {
    let model = FusionModel::<f32>::build(&ModelConfig::default(), 8).unwrap();
    let bytes = checkpoint::encode(model.network());
    assert_eq!(&bytes[..4], b"HDRW");
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
    assert_eq!(f64::from_le_bytes(bytes[6..14].try_into().unwrap()), 1.0 / 16.0);
    let layers = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as usize;
    assert_eq!(layers, ModelConfig::default().layers().len());
    // every float parameter is stored once as f32
    let floats: usize = model.network().params().iter().map(|p| p.tensor.len()).sum();
    assert!(bytes.len() > floats * 4);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let model = FusionModel::<f32>::build(&ModelConfig::default(), 9).unwrap();
    let bytes = checkpoint::encode(model.network());
    for (name, data) in [
        ("magic", [b"XXXX".as_slice(), &bytes[4..]].concat()),
        ("truncated", bytes[..bytes.len() - 3].to_vec()),
        ("trailing", [bytes.as_slice(), &[0u8]].concat()),
    ] {
        let path = dir.path().join(name);
        std::fs::write(&path, data).unwrap();
        assert!(FusionModel::<f32>::load(&path).is_err(), "{name}");
    }
    assert!(FusionModel::<f32>::load(dir.path().join("missing")).unwrap_err().is_io());
}
