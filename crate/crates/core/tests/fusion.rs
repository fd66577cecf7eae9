mod common;

use harakat_core::audio::MelSpectrogram;
use harakat_core::autograd::Graph;
use harakat_core::fusion::{downsample_speech, early_position_map, FusionMode, FusionModel};
use harakat_core::{Error, Real, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mel(n_frames: usize, seed: u64) -> MelSpectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MelSpectrogram::new(80, n_frames, (0..80 * n_frames).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn downsample_constant_rows_stay_constant() {
    let t = Tensor::full(&[1500, 3], 0.7);
    let d = downsample_speech(&t, 10).unwrap();
    assert_eq!(d.shape(), &[150, 3]);
    assert!(d.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
}

#[test]
fn downsample_ramp_gives_window_midpoints() {
    let t = Tensor::new(&[1500, 2], (0..3000).map(|i| (i / 2) as Real).collect()).unwrap();
    let d = downsample_speech(&t, 10).unwrap();
    for k in 0..150 {
        let want = 10.0 * k as Real + 4.5;
        assert_eq!(d.row(k), &[want, want]);
    }
}

#[test]
fn downsample_rejects_indivisible_length() {
    let t = Tensor::zeros(&[15, 2]);
    assert_eq!(downsample_speech(&t, 10), Err(Error::PoolFactor { frames: 15, factor: 10 }));
    assert!(downsample_speech(&t, 0).is_err());
}

proptest! {
    #[test]
    fn downsample_matches_window_means(windows in 1usize..20, factor in 1usize..8, d in 1usize..5, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = windows * factor;
        let data: Vec<Real> = (0..rows * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let out = downsample_speech(&Tensor::new(&[rows, d], data.clone()).unwrap(), factor).unwrap();
        for k in 0..windows {
            for c in 0..d {
                let mean = (0..factor).map(|j| data[(k * factor + j) * d + c] as f64).sum::<f64>() / factor as f64;
                prop_assert!((out.at(k, c) as f64 - mean).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn early_positions_put_text_after_speech() {
    let map = early_position_map(150, 7);
    assert_eq!(map.len(), 157);
    for i in 0..7 {
        assert_eq!(map[150 + i], 150 + i);
    }
    assert_eq!(early_position_map(0, 3), vec![0, 1, 2]);
}

#[test]
fn logits_have_one_row_per_character_in_every_mode() {
    for fusion in [FusionMode::Early, FusionMode::CrossAttention] {
        let model = FusionModel::new(common::tiny_model(12, fusion), 1).unwrap();
        let ids = [2, 3, 4, 5, 0, 0];
        let valid = [true, true, true, true, false, false];
        let mel = random_mel(40, 2);
        for m in [None, Some(&mel)] {
            let logits = model.logits(&ids, &valid, m).unwrap();
            assert_eq!(logits.shape(), &[6, 15]);
            assert!(logits.all_finite());
        }
    }
}

#[test]
fn speech_input_changes_logits() {
    for fusion in [FusionMode::Early, FusionMode::CrossAttention] {
        let model = FusionModel::new(common::tiny_model(12, fusion), 3).unwrap();
        let ids = [2, 3, 4];
        let a = model.logits(&ids, &[true; 3], Some(&random_mel(40, 4))).unwrap();
        let b = model.logits(&ids, &[true; 3], Some(&random_mel(40, 5))).unwrap();
        assert!(a.max_abs_diff(&b) > 1e-4, "{fusion:?}");
    }
}

#[test]
fn text_only_path_ignores_every_speech_side_parameter() {
    for fusion in [FusionMode::Early, FusionMode::CrossAttention] {
        let mut model = FusionModel::new(common::tiny_model(12, fusion), 6).unwrap();
        let ids = [2, 3, 4, 5];
        let before = model.logits(&ids, &[true; 4], None).unwrap();
        for p in model.store.iter_mut() {
            if p.name.starts_with("speech.") || p.name.starts_with("proj.") || p.name.starts_with("cross.") {
                p.value.data_mut().iter_mut().for_each(|v| *v += 1.0);
            }
        }
        assert_eq!(model.logits(&ids, &[true; 4], None).unwrap(), before, "{fusion:?}");
    }
}

#[test]
fn cross_attention_without_speech_is_text_encoder_then_head() {
    let model = FusionModel::new(common::tiny_model(12, FusionMode::CrossAttention), 7).unwrap();
    let ids = [2, 3, 4, 5];
    let mut g = Graph::new();
    let states = model.text.encode(&mut g, &model.store, &ids, &[true; 4]).unwrap().states;
    let direct = model.head.forward(&mut g, &model.store, states).unwrap();
    assert_eq!(model.logits(&ids, &[true; 4], None).unwrap(), *g.value(direct));
}

#[test]
fn predict_returns_one_label_per_character() {
    let model = FusionModel::new(common::tiny_model(12, FusionMode::Early), 8).unwrap();
    assert_eq!(model.predict(&[2, 3, 4, 5, 6], None).unwrap().len(), 5);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = common::tiny_model(12, FusionMode::Early);
    cfg.pool_factor = 7;
    assert!(FusionModel::new(cfg, 0).is_err());
    let mut cfg = common::tiny_model(12, FusionMode::CrossAttention);
    cfg.fusion_heads = 3;
    assert!(FusionModel::new(cfg, 0).is_err());
}

#[test]
fn fusion_mode_names_parse() {
    assert_eq!("early".parse::<FusionMode>().unwrap(), FusionMode::Early);
    assert_eq!("cross_attention".parse::<FusionMode>().unwrap(), FusionMode::CrossAttention);
    assert!("late".parse::<FusionMode>().is_err());
}
