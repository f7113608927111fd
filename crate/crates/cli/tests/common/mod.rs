//! Synthetic fixture corpus and pipeline drivers shared by the CLI tests.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ser_core::audio_io::{encode_wav, AudioClip};
use ser_core::Emotion;

pub const PER_CLASS: usize = 10;

/// One utterance-like clip: silence-padded harmonic tone whose pitch,
/// tremolo rate and brightness depend on the class, plus faint noise.
pub fn synth_clip(class: usize, variant: usize, seconds: f64, rate: u32, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((class as u64) << 32) ^ variant as u64);
    let n = (seconds * f64::from(rate)) as usize;
    let pad = (0.15 * f64::from(rate)) as usize;
    let f0 = (110.0 + 55.0 * class as f64) * rng.random_range(0.97..1.03);
    let tremolo = 2.0 + class as f64;
    let tilt = 0.35 + 0.08 * class as f64;
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let noise = 0.004 * rng.random_range(-1.0..1.0);
            if i < pad || i >= n.saturating_sub(pad) {
                return noise;
            }
            let t = i as f64 / f64::from(rate);
            let env = 0.6 + 0.4 * (2.0 * PI * tremolo * t).sin();
            let tone: f64 = (1..=6)
                .map(|h| tilt.powi(h - 1) * (2.0 * PI * f0 * f64::from(h) * t + phase * f64::from(h)).sin())
                .sum();
            0.25 * env * tone + noise
        })
        .collect();
    AudioClip::new(samples, rate, format!("c{class}v{variant}")).unwrap()
}

pub fn write_wav(path: &Path, clip: &AudioClip) {
    std::fs::write(path, encode_wav(clip).unwrap()).unwrap();
}

fn dataset_and_label(e: Emotion, variant: usize) -> (&'static str, &'static str) {
    const ALL: [&str; 5] = ["CREMA-D", "SAVEE", "TESS", "IEMOCAP", "RAVDESS"];
    match e {
        Emotion::Calm => ("RAVDESS", "calm"),
        Emotion::Surprised => (["SAVEE", "TESS", "IEMOCAP", "RAVDESS"][variant % 4], "surprised"),
        _ => (ALL[variant % 5], e.name()),
    }
}

/// Writes `per_class` clips per emotion, two neutral clips and a manifest.
/// Returns the manifest path.
pub fn write_corpus(root: &Path, per_class: usize, seed: u64) -> PathBuf {
    let audio = root.join("audio");
    std::fs::create_dir_all(&audio).unwrap();
    let mut manifest = String::from("path,dataset,raw_label,speaker\n");
    for e in Emotion::ALL {
        for v in 0..per_class {
            // a few clips at 22.05 kHz to exercise resampling
            let rate = if v % 5 == 4 { 22050 } else { 16000 };
            let clip = synth_clip(e.code(), v, 1.6, rate, seed);
            let name = format!("{}_{v:02}.wav", e.name());
            write_wav(&audio.join(&name), &clip);
            let (ds, label) = dataset_and_label(e, v);
            manifest.push_str(&format!("audio/{name},{ds},{label},spk{}\n", v % 4));
        }
    }
    for v in 0..2 {
        let clip = synth_clip(0, 100 + v, 1.6, 16000, seed);
        let name = format!("neutral_{v:02}.wav");
        write_wav(&audio.join(&name), &clip);
        manifest.push_str(&format!("audio/{name},CREMA-D,neutral,spk0\n"));
    }
    let path = root.join("manifest.csv");
    std::fs::write(&path, manifest).unwrap();
    path
}

pub fn write_noise_dir(root: &Path, seed: u64) -> PathBuf {
    let dir = root.join("noise");
    std::fs::create_dir_all(&dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white: Vec<f64> = (0..8000).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut acc = 0.0;
    let brown: Vec<f64> = (0..12000)
        .map(|_| {
            acc = 0.98 * acc + rng.random_range(-0.05..0.05);
            acc
        })
        .collect();
    write_wav(&dir.join("white.wav"), &AudioClip::new(white, 16000, "white").unwrap());
    write_wav(&dir.join("brown.wav"), &AudioClip::new(brown, 16000, "brown").unwrap());
    dir
}

pub fn ser(args: &[&str]) -> i32 {
    let mut argv = vec!["ser"];
    argv.extend_from_slice(args);
    ser_cli::run(argv)
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Files produced by one smoke run.
pub struct SmokeRun {
    pub root: PathBuf,
    pub records: PathBuf,
    pub plan: PathBuf,
    pub features: [PathBuf; 3],
    pub model: PathBuf,
    pub report: PathBuf,
}

/// curate → split → augment → featurize (train/val/test) → train KNN →
/// evaluate on test, all through the CLI entry point.
pub fn smoke_pipeline(root: &Path, seed: u64) -> SmokeRun {
    let manifest = write_corpus(root, PER_CLASS, 5);
    let noise = write_noise_dir(root, 6);
    let records = root.join("records.jsonl");
    let plan = root.join("plan.json");
    let work = root.join("work");
    let seed_s = seed.to_string();
    let w = p(&work);
    assert_eq!(ser(&["--work-dir", w, "curate", "--manifest", p(&manifest), "--out", p(&records)]), 0);
    assert_eq!(
        ser(&[
            "--work-dir", w, "split", "--records", p(&records), "--seed", &seed_s, "--test-frac", "0.2", "--val-frac",
            "0.2",
        ]),
        0
    );
    assert_eq!(
        ser(&[
            "--work-dir", w, "augment", "--records", p(&records), "--noise-dir", p(&noise), "--targets", "9", "--seed",
            &seed_s, "--out-dir", p(&root.join("augmented")), "--plan", p(&plan),
        ]),
        0
    );
    let features = ["train", "val", "test"].map(|s| root.join(format!("features_{s}.csv")));
    for (s, f) in ["train", "val", "test"].iter().zip(&features) {
        assert_eq!(
            ser(&["--work-dir", w, "featurize", "--records", p(&records), "--split", s, "--out", p(f)]),
            0
        );
    }
    let model = root.join("model.bin");
    assert_eq!(
        ser(&[
            "--work-dir", w, "train", "--features", p(&features[0]), "--model", "knn", "--out", p(&model),
            "--val-features", p(&features[1]),
        ]),
        0
    );
    let report = root.join("report.json");
    assert_eq!(
        ser(&[
            "--work-dir", w, "evaluate", "--model", p(&model), "--features", p(&features[2]), "--report", p(&report),
        ]),
        0
    );
    SmokeRun {
        root: root.to_path_buf(),
        records,
        plan,
        features,
        model,
        report,
    }
}

/// A 3-NN model fit on 21 synthetic clips (3 per class).
pub fn fixture_predictor() -> std::sync::Arc<ser_cli::service::Predictor> {
    use ser_core::features::FeatureConfig;
    use ser_core::preprocess::PreprocessConfig;
    use ser_core::{Dataset, Split, UtteranceRecord};
    use ser_models::knn::KnnParams;
    use ser_models::{fit_model, DesignMatrix, ModelSpec};

    let dir = tempfile::tempdir().unwrap();
    let mut records = Vec::new();
    for e in Emotion::ALL {
        for v in 0..3 {
            let path = dir.path().join(format!("{}_{v}.wav", e.name()));
            write_wav(&path, &synth_clip(e.code(), v, 1.5, 16000, 1));
            records.push(UtteranceRecord {
                utt_id: format!("{}_{v}", e.name()),
                path,
                dataset: Dataset::Ravdess,
                raw_label: e.name().into(),
                label: e,
                split: Split::Train,
                augmented_from: None,
                speaker: None,
                gender: None,
                prepared: false,
            });
        }
    }
    let refs: Vec<&UtteranceRecord> = records.iter().collect();
    let (rows, skipped) = ser_cli::pipeline::featurize(&refs, &PreprocessConfig::default(), &FeatureConfig::default());
    assert!(skipped.is_empty(), "{skipped:?}");
    let data = DesignMatrix::from_feature_rows(&rows).unwrap();
    let artifact = fit_model(&ModelSpec::Knn(KnnParams { k: 3, ..Default::default() }), &data).unwrap();
    std::sync::Arc::new(
        ser_cli::service::Predictor::new(artifact, PreprocessConfig::default(), FeatureConfig::default()).unwrap(),
    )
}

/// One random split/augment configuration. Returns an error describing any
/// augmented record that ends up outside train or derived from a non-train
/// record. Both stage orders are exercised.
pub fn leakage_trial(seed: u64) -> Result<(), String> {
    use rand::seq::SliceRandom;
    use ser_cli::pipeline::{augmented_records, plan_augmentation, split};
    use ser_core::augment::{AugmentConfig, AugmentKind};
    use ser_core::corpus::{assign_validation, check_leakage, stratified_split, SplitConfig};
    use ser_core::{Dataset, Split, UtteranceRecord};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for e in Emotion::ALL {
        for i in 0..rng.random_range(0..25) {
            records.push(UtteranceRecord {
                utt_id: format!("{}_{i:03}", e.name()),
                path: PathBuf::from("unused.wav"),
                dataset: Dataset::ALL[rng.random_range(0..5)],
                raw_label: e.name().into(),
                label: e,
                split: Split::Unassigned,
                augmented_from: None,
                speaker: Some(format!("s{}", rng.random_range(0..6))),
                gender: None,
                prepared: false,
            });
        }
    }
    let cfg = SplitConfig {
        test_fraction: rng.random_range(0.05..0.5),
        val_fraction_of_train: rng.random_range(0.05..0.5),
        seed: rng.random(),
        group_by_speaker: rng.random_bool(0.3),
    };
    let noise_ids: Vec<String> = if rng.random_bool(0.5) { vec!["n1".into(), "n2".into()] } else { vec![] };
    let mut kinds = AugmentKind::CYCLE.to_vec();
    kinds.shuffle(&mut rng);
    kinds.truncate(rng.random_range(1..=4));
    if noise_ids.is_empty() {
        kinds.retain(|k| *k != AugmentKind::NoiseMix);
    }
    if kinds.is_empty() {
        kinds.push(AugmentKind::Gain);
    }
    let aug = AugmentConfig {
        max_copies_per_source: if rng.random_bool(0.3) { None } else { Some(rng.random_range(1..5)) },
        kinds,
        ..AugmentConfig::default()
    };
    let targets = Emotion::ALL.iter().map(|&e| (e, rng.random_range(0..60))).collect();
    let aug_seed: u64 = rng.random();
    let out = Path::new("aug");
    let err = |e: anyhow::Error| format!("{e:#}");

    let records = if rng.random_bool(0.5) {
        let (mut records, _, _) = split(records, &cfg).map_err(err)?;
        let plan = plan_augmentation(&records, &targets, &aug, &noise_ids, aug_seed).map_err(err)?;
        let new = augmented_records(&records, &plan, out).map_err(err)?;
        records.extend(new);
        records
    } else {
        let mut records = records;
        stratified_split(&mut records, &cfg).map_err(|e| e.to_string())?;
        let plan = plan_augmentation(&records, &targets, &aug, &noise_ids, aug_seed).map_err(err)?;
        let new = augmented_records(&records, &plan, out).map_err(err)?;
        records.extend(new);
        assign_validation(records, &cfg).map_err(|e| e.to_string())?.0
    };
    check_leakage(&records).map_err(|e| e.to_string())?;
    let split_of: std::collections::HashMap<&str, Split> =
        records.iter().map(|r| (r.utt_id.as_str(), r.split)).collect();
    for r in &records {
        if let Some(src) = &r.augmented_from {
            if r.split != Split::Train || split_of.get(src.as_str()) != Some(&Split::Train) {
                return Err(format!("{} ({}) from {src}", r.utt_id, r.split));
            }
        }
    }
    Ok(())
}
