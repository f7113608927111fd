//! Pipeline stages. Each subcommand is a thin wrapper around one of these.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use ser_core::audio_io::{decode_wav, encode_wav, resample, AudioClip};
use ser_core::augment::{execute_plan, plan_balance, AugmentConfig, BalancePlan};
use ser_core::corpus::{
    assign_validation, check_leakage, load_manifest, read_records, stratified_split, write_records, LabelMapper,
    LabelOverride, ManifestReport, SplitConfig, SplitReport,
};
use ser_core::features::cache::FeatureRow;
use ser_core::features::{extract_feature_vector, spectrogram_image, stft, FeatureConfig};
use ser_core::features::{IMAGE_HOP_MS, IMAGE_NFFT, IMAGE_WIN_MS};
use ser_core::metrics::{report, EvalReport};
use ser_core::preprocess::{block_1s, meets_min_duration, prepare_clip, PreprocessConfig};
use ser_core::{Emotion, Split, UtteranceRecord};
use ser_models::grid::{knn_grid_search, GridResult};
use ser_models::nn::{build_cnn, build_mlp, TrainConfig};
use ser_models::{fit_model, predict_labels, DesignMatrix, ModelArtifact, ModelSpec};

use crate::config::PipelineConfig;

pub fn read_records_file(path: &Path) -> Result<Vec<UtteranceRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_records(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn write_records_file(path: &Path, records: &[UtteranceRecord]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_records(BufWriter::new(f), records).with_context(|| format!("writing {}", path.display()))
}

pub fn curate(manifest: &Path, overrides: &[LabelOverride]) -> Result<(Vec<UtteranceRecord>, ManifestReport)> {
    let mapper = LabelMapper::default().with_overrides(overrides);
    Ok(load_manifest(manifest, &mapper)?)
}

/// Test split, then validation split of the remaining train records.
pub fn split(records: Vec<UtteranceRecord>, cfg: &SplitConfig) -> Result<(Vec<UtteranceRecord>, SplitReport, SplitReport)> {
    let mut records = records;
    let test = stratified_split(&mut records, cfg)?;
    let (records, val) = assign_validation(records, cfg)?;
    check_leakage(&records)?;
    Ok((records, test, val))
}

/// Original train records per class, ordered by id.
pub fn train_sources(records: &[UtteranceRecord]) -> BTreeMap<Emotion, Vec<String>> {
    let mut out: BTreeMap<Emotion, Vec<String>> = BTreeMap::new();
    for r in records {
        if r.split == Split::Train && r.augmented_from.is_none() {
            out.entry(r.label).or_default().push(r.utt_id.clone());
        }
    }
    for ids in out.values_mut() {
        ids.sort();
    }
    out
}

pub fn plan_augmentation(
    records: &[UtteranceRecord],
    targets: &BTreeMap<Emotion, usize>,
    cfg: &AugmentConfig,
    noise_ids: &[String],
    seed: u64,
) -> Result<BalancePlan> {
    if records.iter().any(|r| r.split == Split::Unassigned) {
        bail!("records must be split before augmentation");
    }
    Ok(plan_balance(&train_sources(records), targets, cfg, noise_ids, seed)?)
}

/// Records describing the plan's outputs, stored as `<out_dir>/<new_id>.wav`.
pub fn augmented_records(records: &[UtteranceRecord], plan: &BalancePlan, out_dir: &Path) -> Result<Vec<UtteranceRecord>> {
    let by_id: HashMap<&str, &UtteranceRecord> = records.iter().map(|r| (r.utt_id.as_str(), r)).collect();
    plan.entries
        .iter()
        .map(|e| {
            let src = by_id
                .get(e.source_id.as_str())
                .ok_or_else(|| anyhow!("plan refers to unknown record {}", e.source_id))?;
            if by_id.contains_key(e.new_id.as_str()) {
                bail!("augmented id {} already exists in the records", e.new_id);
            }
            Ok(UtteranceRecord {
                utt_id: e.new_id.clone(),
                path: out_dir.join(format!("{}.wav", e.new_id)),
                dataset: src.dataset,
                raw_label: src.raw_label.clone(),
                label: src.label,
                split: Split::Train,
                augmented_from: Some(src.utt_id.clone()),
                speaker: src.speaker.clone(),
                gender: src.gender.clone(),
                prepared: true,
            })
        })
        .collect()
}

/// Decodes a record's audio, running the preprocessing chain unless the
/// record is already prepared.
pub fn load_clip(record: &UtteranceRecord, pre: &PreprocessConfig) -> Result<AudioClip> {
    let bytes = std::fs::read(&record.path).with_context(|| format!("reading {}", record.path.display()))?;
    let clip = decode_wav(&bytes)
        .with_context(|| format!("decoding {}", record.path.display()))?
        .with_source_id(record.utt_id.clone());
    if record.prepared {
        return Ok(clip);
    }
    prepare_clip(&clip, pre).with_context(|| format!("preprocessing {}", record.utt_id))
}

/// Every `*.wav` in `dir`, keyed by file stem and resampled to `rate`.
pub fn load_noise_dir(dir: &Path, rate: u32) -> Result<BTreeMap<String, AudioClip>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if !path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            continue;
        }
        let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        let clip = decode_wav(&bytes).with_context(|| format!("decoding {}", path.display()))?;
        out.insert(id.clone(), resample(&clip, rate)?.with_source_id(id));
    }
    Ok(out)
}

/// Executes the plan, writes one WAV per entry and returns the new records.
pub fn run_augmentation(
    records: &[UtteranceRecord],
    plan: &BalancePlan,
    pre: &PreprocessConfig,
    noise: &BTreeMap<String, AudioClip>,
    out_dir: &Path,
) -> Result<Vec<UtteranceRecord>> {
    let new_records = augmented_records(records, plan, out_dir)?;
    let by_id: HashMap<&str, &UtteranceRecord> = records.iter().map(|r| (r.utt_id.as_str(), r)).collect();
    let clips = execute_plan(
        plan,
        |id| by_id.get(id).and_then(|r| load_clip(r, pre).ok()),
        |id| noise.get(id).cloned(),
    )?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    clips.par_iter().zip(&new_records).try_for_each(|(c, r)| -> Result<()> {
        let bytes = encode_wav(&c.clip)?;
        std::fs::write(&r.path, bytes).with_context(|| format!("writing {}", r.path.display()))
    })?;
    Ok(new_records)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skipped {
    pub utt_id: String,
    pub reason: String,
}

pub fn select_split(records: &[UtteranceRecord], split: Option<Split>) -> Vec<&UtteranceRecord> {
    records.iter().filter(|r| split.is_none_or(|s| r.split == s)).collect()
}

/// Feature rows in record order; clips that fail to load or are too short
/// after preprocessing are skipped with a reason.
pub fn featurize(
    records: &[&UtteranceRecord],
    pre: &PreprocessConfig,
    feat: &FeatureConfig,
) -> (Vec<FeatureRow>, Vec<Skipped>) {
    let results: Vec<Result<FeatureRow, String>> = records
        .par_iter()
        .map(|r| {
            let clip = load_clip(r, pre).map_err(|e| format!("{e:#}"))?;
            if !meets_min_duration(&clip, pre) {
                return Err(format!("{:.3} s after preprocessing, below the minimum", clip.duration_secs()));
            }
            let values = extract_feature_vector(&clip, feat).map_err(|e| e.to_string())?;
            Ok(FeatureRow {
                utt_id: r.utt_id.clone(),
                label: r.label,
                values,
            })
        })
        .collect();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (r, res) in records.iter().zip(results) {
        match res {
            Ok(row) => rows.push(row),
            Err(reason) => skipped.push(Skipped {
                utt_id: r.utt_id.clone(),
                reason,
            }),
        }
    }
    (rows, skipped)
}

/// Writes `<utt_id>_<block>.png` for every 1-s block; returns the image
/// count and the skipped records.
pub fn spectrogram_images(
    records: &[&UtteranceRecord],
    pre: &PreprocessConfig,
    overlap_ms: f64,
    out_dir: &Path,
) -> Result<(usize, Vec<Skipped>)> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let results: Vec<Result<usize, String>> = records
        .par_iter()
        .map(|r| {
            let clip = load_clip(r, pre).map_err(|e| format!("{e:#}"))?;
            let blocks = block_1s(&clip, overlap_ms).map_err(|e| e.to_string())?;
            for (b, block) in blocks.iter().enumerate() {
                let spec = stft(block, IMAGE_WIN_MS, IMAGE_HOP_MS, IMAGE_NFFT, true).map_err(|e| e.to_string())?;
                let path = out_dir.join(format!("{}_{b:03}.png", r.utt_id));
                spectrogram_image(&spec).save_png(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            Ok(blocks.len())
        })
        .collect();
    let mut n = 0;
    let mut skipped = Vec::new();
    for (r, res) in records.iter().zip(results) {
        match res {
            Ok(k) => n += k,
            Err(reason) => skipped.push(Skipped {
                utt_id: r.utt_id.clone(),
                reason,
            }),
        }
    }
    Ok((n, skipped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Knn,
    Gnb,
    Logreg,
    Tree,
    Forest,
    Mlp,
    Cnn1d,
}

impl ModelChoice {
    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Knn => "knn",
            ModelChoice::Gnb => "gnb",
            ModelChoice::Logreg => "logreg",
            ModelChoice::Tree => "tree",
            ModelChoice::Forest => "forest",
            ModelChoice::Mlp => "mlp",
            ModelChoice::Cnn1d => "cnn1d",
        }
    }
}

/// Resolves the model specification; `seed` overrides any seed in `cfg`.
pub fn model_spec(choice: ModelChoice, cfg: &PipelineConfig, n_features: usize, seed: Option<u64>) -> Result<ModelSpec> {
    let m = &cfg.model;
    let neural_train = |preset: TrainConfig| {
        let mut t = cfg.train.clone().unwrap_or(preset);
        if let Some(s) = seed {
            t.seed = s;
        }
        t
    };
    Ok(match choice {
        ModelChoice::Knn => ModelSpec::Knn(m.knn.clone()),
        ModelChoice::Gnb => ModelSpec::Gnb,
        ModelChoice::Logreg => ModelSpec::Logreg(m.logreg.clone()),
        ModelChoice::Tree => ModelSpec::Tree(m.tree.clone()),
        ModelChoice::Forest => {
            let mut p = m.forest.clone();
            if let Some(s) = seed {
                p.seed = s;
            }
            ModelSpec::Forest(p)
        }
        ModelChoice::Mlp => ModelSpec::Neural {
            network: build_mlp(n_features, &m.mlp_hidden)?,
            train: neural_train(TrainConfig::cnn()),
        },
        ModelChoice::Cnn1d => ModelSpec::Neural {
            network: build_cnn(n_features),
            train: neural_train(TrainConfig::cnn()),
        },
    })
}

/// Fits the chosen model; KNN optionally runs the grid search first.
pub fn train(
    choice: ModelChoice,
    cfg: &PipelineConfig,
    data: &DesignMatrix,
    seed: Option<u64>,
) -> Result<(ModelArtifact, Option<GridResult>)> {
    let mut spec = model_spec(choice, cfg, data.n_features(), seed)?;
    let mut grid = None;
    if choice == ModelChoice::Knn && cfg.model.knn_grid_search {
        let max_k = cfg.model.grid_max_k.min(data.n_rows() - data.n_rows() / cfg.model.grid_folds);
        let ks: Vec<usize> = (1..=max_k.max(1)).collect();
        let result = knn_grid_search(data, &ks, cfg.model.grid_folds, seed.unwrap_or(cfg.split.seed))?;
        spec = ModelSpec::Knn(result.best.clone());
        grid = Some(result);
    }
    Ok((fit_model(&spec, data)?, grid))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub utt_id: String,
    pub truth: Emotion,
    pub predicted: Emotion,
}

pub fn evaluate(artifact: &ModelArtifact, data: &DesignMatrix) -> Result<(EvalReport, Vec<Prediction>)> {
    let predicted = predict_labels(artifact, data.x.view())?;
    let rep = report(&data.y, &predicted)?;
    let preds = data
        .ids
        .iter()
        .zip(&data.y)
        .zip(&predicted)
        .map(|((id, &t), &p)| Prediction {
            utt_id: id.clone(),
            truth: Emotion::from_code(t).expect("valid code"),
            predicted: Emotion::from_code(p).expect("valid code"),
        })
        .collect();
    Ok((rep, preds))
}

/// Reads `utt_id,truth,predicted` rows (emotion names) and scores them.
pub fn evaluate_predictions(path: &Path) -> Result<EvalReport> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut truth = Vec::new();
    let mut predicted = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.with_context(|| format!("{} line {}", path.display(), i + 2))?;
        let parse = |c: usize| -> Result<usize> {
            let s = row.get(c).ok_or_else(|| anyhow!("{} line {}: missing column {c}", path.display(), i + 2))?;
            Ok(s.parse::<Emotion>().map_err(anyhow::Error::msg)?.code())
        };
        truth.push(parse(1)?);
        predicted.push(parse(2)?);
    }
    Ok(report(&truth, &predicted)?)
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut out = String::from("utt_id,truth,predicted\n");
    for p in preds {
        out.push_str(&format!("{},{},{}\n", p.utt_id, p.truth, p.predicted));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn default_work_dir(primary_output: &Path) -> PathBuf {
    match primary_output.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}
