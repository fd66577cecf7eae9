use std::fs;
use std::path::Path;

use harakat::checkpoint::{load_checkpoint, read_checkpoint_manifest, save_checkpoint};
use harakat::error::{AppError, EXIT_CONFIG, EXIT_DATA};
use harakat::manifest::{load_examples, load_manifest, write_manifest, ManifestRecord};
use harakat::vocab::{format_vocab, parse_vocab, read_vocab, write_vocab};
use harakat::wav::{read_wav, write_wav};
use harakat_core::audio::{FeatureConfig, Waveform};
use harakat_core::data::{build_vocab, Example};
use harakat_core::encoders::ModelConfig;
use harakat_core::fusion::{FusionMode, FusionModel};
use harakat_core::text::CharVocab;
use harakat_core::train::{TrainConfig, Trainer};
use hound::{SampleFormat, WavSpec, WavWriter};

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn manifest_error_line(e: AppError) -> usize {
    match e {
        AppError::Manifest { line, .. } => line,
        other => panic!("expected a manifest error, got {other:?}"),
    }
}

#[test]
fn empty_manifest_has_no_records() {
    let dir = tempfile::tempdir().unwrap();
    let m = load_manifest(&write(dir.path(), "m.jsonl", "")).unwrap();
    assert!(m.records.is_empty());
}

#[test]
fn record_without_text_is_reported_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "m.jsonl", "{\"id\":\"a\",\"text\":\"كَتَبَ\"}\n{\"id\":\"b\"}\n");
    let e = load_manifest(&p).unwrap_err();
    assert_eq!(e.exit_code(), EXIT_DATA);
    assert_eq!(manifest_error_line(e), 2);
    let p = write(dir.path(), "n.jsonl", "{\"id\":\"a\",\"text\":\"  \"}\n");
    assert_eq!(manifest_error_line(load_manifest(&p).unwrap_err()), 1);
}

#[test]
fn duplicate_ids_and_unknown_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "m.jsonl", "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n");
    assert_eq!(manifest_error_line(load_manifest(&p).unwrap_err()), 2);
    let p = write(dir.path(), "n.jsonl", "{\"id\":\"a\",\"text\":\"x\",\"speaker\":1}\n");
    assert_eq!(manifest_error_line(load_manifest(&p).unwrap_err()), 1);
}

#[test]
fn three_line_manifest_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let records = vec![
        ManifestRecord { id: "a".into(), text: "كَتَبَ".into(), audio: None, split: Some("train".into()) },
        ManifestRecord { id: "b".into(), text: "ذَهَبَ".into(), audio: Some("wavs/b.wav".into()), split: Some("dev".into()) },
        ManifestRecord { id: "c".into(), text: "عِلْمٌ".into(), audio: None, split: None },
    ];
    let p = dir.path().join("m.jsonl");
    write_manifest(&p, &records).unwrap();
    assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 3);
    let m = load_manifest(&p).unwrap();
    assert_eq!(m.records, records);
    assert_eq!(m.audio_path(&m.records[1]).unwrap(), dir.path().join("wavs/b.wav"));
    assert_eq!(m.select(Some("dev")).len(), 1);
    assert_eq!(m.select(None).len(), 3);
}

#[test]
fn unreadable_audio_is_skipped_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "bad.wav", "not a wav");
    let p = write(
        dir.path(),
        "m.jsonl",
        "{\"id\":\"a\",\"text\":\"كَتَبَ\",\"audio\":\"bad.wav\"}\n{\"id\":\"b\",\"text\":\"ذَهَبَ\"}\n",
    );
    let m = load_manifest(&p).unwrap();
    let recs = m.select(None);
    let (exs, skipped) = load_examples(&m, &recs, &FeatureConfig::with_frames(20)).unwrap();
    assert_eq!(exs.len(), 1);
    assert_eq!(skipped.len(), 1);
    assert_eq!(skipped[0].id, "a");
}

#[test]
fn wav_round_trip_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let samples: Vec<f32> = (0..1600).map(|i| 0.8 * (i as f32 * 0.05).sin()).collect();
    let p = dir.path().join("t.wav");
    write_wav(&p, &Waveform::new(samples.clone(), 16_000).unwrap()).unwrap();
    let back = read_wav(&p).unwrap();
    assert_eq!(back.sample_rate(), 16_000);
    assert_eq!(back.samples().len(), samples.len());
    for (a, b) in back.samples().iter().zip(&samples) {
        assert!((a - b).abs() < 1.0 / 16_000.0);
    }
}

#[test]
fn stereo_and_other_rates_become_mono_16k() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.wav");
    let spec = WavSpec { channels: 2, sample_rate: 8_000, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let mut w = WavWriter::create(&p, spec).unwrap();
    for _ in 0..800 {
        w.write_sample(8192i16).unwrap();
        w.write_sample(-8192i16).unwrap();
    }
    w.finalize().unwrap();
    let back = read_wav(&p).unwrap();
    assert_eq!(back.sample_rate(), 16_000);
    assert_eq!(back.samples().len(), 1600);
    assert!(back.samples().iter().all(|&s| s == 0.0));
}

#[test]
fn vocab_file_round_trips_and_rejects_damage() {
    let vocab = CharVocab::build("كتب ذهب،".chars());
    let text = format_vocab(&vocab);
    assert!(text.starts_with("0\t<pad>\n1\t<unk>\n2\tU+"));
    assert_eq!(parse_vocab(&text, Path::new("v")).unwrap(), vocab);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("vocab.tsv");
    write_vocab(&p, &vocab).unwrap();
    assert_eq!(read_vocab(&p).unwrap(), vocab);
    let e = parse_vocab(&text.replace("1\t<unk>", "1\tU+0041"), Path::new("v")).unwrap_err();
    assert_eq!(e.exit_code(), EXIT_CONFIG);
    assert!(parse_vocab("0\t<pad>\n2\t<unk>\n", Path::new("v")).is_err());
}

fn toy_trainer() -> (Trainer, Vec<Example>, CharVocab) {
    let exs: Vec<Example> = ["كَتَبَ الوَلَدُ", "ذَهَبَ", "عِلْمٌ نَافِعٌ"]
        .iter()
        .enumerate()
        .map(|(i, t)| Example::new(format!("e{i}"), *t, None).unwrap())
        .collect();
    let vocab = build_vocab(&exs);
    let model = ModelConfig {
        d_text: 16,
        text_layers: 1,
        d_speech: 16,
        speech_layers: 1,
        mel_frames: 40,
        pool_factor: 4,
        ..ModelConfig::toy(vocab.len(), FusionMode::CrossAttention)
    };
    let train = TrainConfig { batch_size: 2, lr: 1e-3, epochs_phase1: 1, epochs_phase2: 2, seed: 3, ..TrainConfig::default() };
    (Trainer::new(FusionModel::new(model, 3).unwrap(), train).unwrap(), exs, vocab)
}

fn param_bits(t: &Trainer) -> Vec<u64> {
    let all = t.model.store.iter().map(|p| &p.value).chain(&t.optimizer.m).chain(&t.optimizer.v);
    all.flat_map(|x| x.data().iter().map(|v| v.to_bits() as u64)).collect()
}

#[test]
fn checkpoint_on_disk_resumes_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let (mut straight, exs, vocab) = toy_trainer();
    straight.run_epoch(&exs, None, &vocab).unwrap();
    straight.run_epoch(&exs, None, &vocab).unwrap();

    let (mut first, _, _) = toy_trainer();
    first.run_epoch(&exs, None, &vocab).unwrap();
    let ckpt_dir = dir.path().join("ckpt");
    save_checkpoint(&ckpt_dir, &first.to_checkpoint(), &vocab).unwrap();
    drop(first);
    let (ckpt, loaded_vocab) = load_checkpoint(&ckpt_dir).unwrap();
    assert_eq!(loaded_vocab, vocab);
    let mut resumed = Trainer::from_checkpoint(&ckpt).unwrap();
    assert_eq!(resumed.epoch(), 1);
    resumed.run_epoch(&exs, None, &vocab).unwrap();

    assert_eq!(param_bits(&straight), param_bits(&resumed));
    assert_eq!(straight.optimizer.t, resumed.optimizer.t);
    assert_eq!(straight.step(), resumed.step());
}

#[test]
fn saving_twice_writes_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _, vocab) = toy_trainer();
    let ckpt = t.to_checkpoint();
    save_checkpoint(&dir.path().join("a"), &ckpt, &vocab).unwrap();
    save_checkpoint(&dir.path().join("b"), &ckpt, &vocab).unwrap();
    for f in ["manifest.json", "weights.bin", "optim.bin", "state.json", "vocab.tsv"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let m = read_checkpoint_manifest(&dir.path().join("a")).unwrap();
    assert_eq!(m.model.fusion, FusionMode::CrossAttention);
    assert_eq!(m.tensors.len(), t.model.store.len());
    assert_eq!(m.optim_tensors.len(), 2 * t.model.store.len());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (t, _, vocab) = toy_trainer();
    let d = dir.path().join("c");
    save_checkpoint(&d, &t.to_checkpoint(), &vocab).unwrap();

    let weights = fs::read(d.join("weights.bin")).unwrap();
    fs::write(d.join("weights.bin"), &weights[..weights.len() - 4]).unwrap();
    assert_eq!(load_checkpoint(&d).unwrap_err().exit_code(), EXIT_CONFIG);
    fs::write(d.join("weights.bin"), &weights).unwrap();
    assert!(load_checkpoint(&d).is_ok());

    write_vocab(&d.join("vocab.tsv"), &CharVocab::build("ab".chars())).unwrap();
    assert_eq!(load_checkpoint(&d).unwrap_err().exit_code(), EXIT_CONFIG);

    assert_eq!(load_checkpoint(&dir.path().join("missing")).unwrap_err().exit_code(), EXIT_DATA);
}
