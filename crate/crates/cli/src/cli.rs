//! Argument parsing and subcommand dispatch for the `ser` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ser_core::corpus::corpus_stats;
use ser_core::features::cache::{load_features, save_features, save_scaler, load_scaler, FeatureRow};
use ser_core::features::{apply_scaler, fit_scaler, FeatureVector};
use ser_core::Split;
use ser_models::nn::{build_embedding_head, embed, read_embeddings, TrainConfig};
use ser_models::{fit_model, load_artifact, predict_proba, save_artifact, DesignMatrix, ModelSpec};

use crate::config::{PipelineConfig, Targets};
use crate::pipeline::{self, ModelChoice};
use crate::repro::RunRecord;
use crate::service::{self, Predictor};

#[derive(Debug, Parser)]
#[command(name = "ser", version, about = "Speech emotion recognition pipeline")]
struct Cli {
    /// Pipeline configuration (TOML or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where run records go; defaults to the config's work_dir, then the
    /// directory of the main output.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Map a CSV manifest to JSON Lines records, dropping unused labels.
    Curate {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign train/val/test splits.
    Split {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        test_frac: Option<f64>,
        #[arg(long)]
        val_frac: Option<f64>,
        #[arg(long)]
        group_by_speaker: bool,
        /// Output records; defaults to rewriting `--records`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Balance the train split with augmented copies.
    Augment {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        noise_dir: Option<PathBuf>,
        /// `N` for every class or `angry=N,calm=M,...`.
        #[arg(long)]
        targets: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// Output records; defaults to rewriting `--records`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract the 94-dim feature vectors into a CSV cache.
    Featurize {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only records of this split (train, val, test).
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        scaler: Option<PathBuf>,
        /// Fit the scaler on these rows and save it to `--scaler`; without
        /// this flag an existing scaler is applied to the output.
        #[arg(long, requires = "scaler")]
        fit_scaler: bool,
    },
    /// Render 1-s spectrogram images as PNG.
    Spectrogram {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        overlap_ms: f64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        split: Option<Split>,
    },
    /// Fit a classifier on a feature CSV.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum)]
        model: ModelChoice,
        #[arg(long)]
        out: PathBuf,
        /// Held-out features to score after training.
        #[arg(long)]
        val_features: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a linear softmax head on precomputed embeddings.
    TrainHead {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a model on features, embeddings or stored predictions.
    Evaluate {
        #[arg(long, required_unless_present = "predictions")]
        model: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["embeddings", "predictions"])]
        features: Option<PathBuf>,
        #[arg(long, conflicts_with = "predictions")]
        embeddings: Option<PathBuf>,
        /// CSV `utt_id,truth,predicted` with emotion names.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also write per-utterance predictions.
        #[arg(long)]
        predictions_out: Option<PathBuf>,
    },
    /// Predict the emotion of one WAV file, or of every embedding record.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required_unless_present = "embeddings")]
        wav: Option<PathBuf>,
        #[arg(long, conflicts_with = "wav")]
        embeddings: Option<PathBuf>,
    },
    /// Serve `POST /predict` and `GET /health`.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        addr: Option<String>,
    },
}

/// Parses `argv` and runs the subcommand. Exit codes: 0 success, 1 pipeline
/// failure, 2 usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

struct Ctx {
    cfg: PipelineConfig,
    config_hash: Option<String>,
    work_dir: Option<PathBuf>,
}

impl Ctx {
    fn record(&self, command: &str) -> RunRecord {
        let mut r = RunRecord::new(command);
        r.config_hash = self.config_hash.clone();
        r
    }

    fn finish(&self, record: &RunRecord, primary_output: &Path) -> Result<()> {
        let dir = self
            .work_dir
            .clone()
            .or_else(|| self.cfg.paths.work_dir.clone())
            .unwrap_or_else(|| pipeline::default_work_dir(primary_output));
        let path = record.write(&dir)?;
        eprintln!("run record: {}", path.display());
        Ok(())
    }
}

fn execute(cli: Cli) -> Result<()> {
    let (cfg, config_hash) = match &cli.config {
        Some(p) => {
            let cfg = PipelineConfig::load(p)?;
            let h = cfg.hash();
            (cfg, Some(h))
        }
        None => (PipelineConfig::default(), None),
    };
    let ctx = Ctx {
        cfg,
        config_hash,
        work_dir: cli.work_dir,
    };
    match cli.command {
        Command::Curate { manifest, out } => curate(&ctx, manifest, &out),
        Command::Split {
            records,
            seed,
            test_frac,
            val_frac,
            group_by_speaker,
            out,
        } => {
            let mut split_cfg = ctx.cfg.split.clone();
            if let Some(s) = seed {
                split_cfg.seed = s;
            }
            if let Some(f) = test_frac {
                split_cfg.test_fraction = f;
            }
            if let Some(f) = val_frac {
                split_cfg.val_fraction_of_train = f;
            }
            split_cfg.group_by_speaker |= group_by_speaker;
            split(&ctx, &records, split_cfg, out.as_deref())
        }
        Command::Augment {
            records,
            noise_dir,
            targets,
            seed,
            out_dir,
            plan,
            out,
        } => augment(&ctx, &records, noise_dir, targets, seed, &out_dir, &plan, out.as_deref()),
        Command::Featurize {
            records,
            out,
            split,
            scaler,
            fit_scaler,
        } => featurize(&ctx, &records, &out, split, scaler.as_deref(), fit_scaler),
        Command::Spectrogram {
            records,
            overlap_ms,
            out_dir,
            split,
        } => spectrogram(&ctx, &records, overlap_ms, &out_dir, split),
        Command::Train {
            features,
            model,
            out,
            val_features,
            seed,
        } => train(&ctx, &features, model, &out, val_features.as_deref(), seed),
        Command::TrainHead { embeddings, out, seed } => train_head(&ctx, &embeddings, &out, seed),
        Command::Evaluate {
            model,
            features,
            embeddings,
            predictions,
            report,
            predictions_out,
        } => evaluate(&ctx, model, features, embeddings, predictions, report, predictions_out),
        Command::Predict { model, wav, embeddings } => predict(&ctx, &model, wav, embeddings),
        Command::Serve { model, addr } => serve(&ctx, &model, addr),
    }
}

fn curate(ctx: &Ctx, manifest: Option<PathBuf>, out: &Path) -> Result<()> {
    let Some(manifest) = manifest.or_else(|| ctx.cfg.paths.manifest.clone()) else {
        bail!("no manifest given (use --manifest or paths.manifest in the config)");
    };
    let (records, report) = pipeline::curate(&manifest, &ctx.cfg.labels)?;
    pipeline::write_records_file(out, &records)?;
    println!("{} records written to {}", records.len(), out.display());
    println!("{} rows dropped", report.dropped.len());
    for d in &report.dropped {
        println!("  line {}: {} ({}, label '{}')", d.line, d.path, d.dataset, d.raw_label);
    }
    print!("{}", corpus_stats(&records).render_text());
    let mut rec = ctx.record("curate");
    rec.arg("manifest", manifest.display()).arg("out", out.display());
    rec.input(&manifest)?.output(out)?;
    ctx.finish(&rec, out)
}

fn split(ctx: &Ctx, records_path: &Path, cfg: ser_core::corpus::SplitConfig, out: Option<&Path>) -> Result<()> {
    let out = out.unwrap_or(records_path);
    let mut rec = ctx.record("split");
    rec.input(records_path)?;
    let records = pipeline::read_records_file(records_path)?;
    let (records, test, val) = pipeline::split(records, &cfg)?;
    pipeline::write_records_file(out, &records)?;
    for w in test.warnings.iter().chain(&val.warnings) {
        eprintln!("warning: {w}");
    }
    for s in [Split::Train, Split::Val, Split::Test] {
        println!("{s}:");
        print!("{}", corpus_stats(records.iter().filter(|r| r.split == s)).render_text());
    }
    rec.arg("records", records_path.display())
        .arg("out", out.display())
        .arg("test_fraction", cfg.test_fraction)
        .arg("val_fraction_of_train", cfg.val_fraction_of_train)
        .arg("group_by_speaker", cfg.group_by_speaker)
        .seed("split", cfg.seed);
    rec.output(out)?;
    ctx.finish(&rec, out)
}

#[allow(clippy::too_many_arguments)]
fn augment(
    ctx: &Ctx,
    records_path: &Path,
    noise_dir: Option<PathBuf>,
    targets: Option<String>,
    seed: Option<u64>,
    out_dir: &Path,
    plan_path: &Path,
    out: Option<&Path>,
) -> Result<()> {
    let out = out.unwrap_or(records_path);
    let mut rec = ctx.record("augment");
    rec.input(records_path)?;
    let seed = seed.unwrap_or(ctx.cfg.split.seed);
    let targets = match targets {
        Some(t) => Targets::parse(&t)?,
        None => ctx.cfg.targets.clone(),
    };
    let noise_dir = noise_dir.or_else(|| ctx.cfg.paths.noise_dir.clone());
    let noise = match &noise_dir {
        Some(d) => pipeline::load_noise_dir(d, ctx.cfg.preprocess.target_rate)?,
        None => Default::default(),
    };
    let mut aug_cfg = ctx.cfg.augment.clone();
    if noise.is_empty() {
        aug_cfg.kinds.retain(|k| *k != ser_core::augment::AugmentKind::NoiseMix);
    }
    let noise_ids: Vec<String> = noise.keys().cloned().collect();
    let mut records = pipeline::read_records_file(records_path)?;
    let plan = pipeline::plan_augmentation(&records, &targets.resolve(), &aug_cfg, &noise_ids, seed)?;
    let mut plan_json = serde_json::to_vec_pretty(&plan)?;
    plan_json.push(b'\n');
    std::fs::write(plan_path, plan_json).with_context(|| format!("writing {}", plan_path.display()))?;
    let new_records = pipeline::run_augmentation(&records, &plan, &ctx.cfg.preprocess, &noise, out_dir)?;
    records.extend(new_records);
    ser_core::corpus::check_leakage(&records)?;
    pipeline::write_records_file(out, &records)?;
    println!("{} augmented clips written to {}", plan.entries.len(), out_dir.display());
    for s in &plan.shortfalls {
        println!("shortfall: {} reaches {} of {} ({})", s.emotion, s.reached, s.target, s.reason);
    }
    print!("{}", corpus_stats(records.iter().filter(|r| r.split == Split::Train)).render_text());
    rec.arg("records", records_path.display())
        .arg("out", out.display())
        .arg("out_dir", out_dir.display())
        .arg("plan", plan_path.display())
        .arg("targets", serde_json::to_string(&targets)?)
        .seed("augment", seed);
    if let Some(d) = &noise_dir {
        rec.arg("noise_dir", d.display());
    }
    rec.output(plan_path)?.output(out)?;
    if out_dir.exists() {
        rec.output_dir(out_dir)?;
    }
    ctx.finish(&rec, out)
}

fn featurize(
    ctx: &Ctx,
    records_path: &Path,
    out: &Path,
    split: Option<Split>,
    scaler_path: Option<&Path>,
    fit: bool,
) -> Result<()> {
    let mut rec = ctx.record("featurize");
    rec.input(records_path)?;
    let records = pipeline::read_records_file(records_path)?;
    let selected = pipeline::select_split(&records, split);
    let (mut rows, skipped) = pipeline::featurize(&selected, &ctx.cfg.preprocess, &ctx.cfg.features);
    for s in &skipped {
        eprintln!("skipped {}: {}", s.utt_id, s.reason);
    }
    if rows.is_empty() {
        bail!("no feature rows produced ({} records selected)", selected.len());
    }
    if let Some(sp) = scaler_path {
        if fit {
            let vectors: Vec<&[f64]> = rows.iter().map(|r| &r.values.values()[..]).collect();
            let params = fit_scaler(&vectors, &split.map_or("all".to_string(), |s| s.to_string()))?;
            save_scaler(sp, &params)?;
            rec.output(sp)?;
        } else {
            rec.input(sp)?;
            let params = load_scaler(sp)?;
            rows = rows
                .into_iter()
                .map(|r| -> Result<FeatureRow> {
                    let z = apply_scaler(&params, r.values.values())?;
                    Ok(FeatureRow {
                        values: FeatureVector::try_from(z).map_err(anyhow::Error::msg)?,
                        ..r
                    })
                })
                .collect::<Result<_>>()?;
        }
    }
    save_features(out, &rows)?;
    println!("{} feature rows written to {} ({} skipped)", rows.len(), out.display(), skipped.len());
    rec.arg("records", records_path.display()).arg("out", out.display());
    if let Some(s) = split {
        rec.arg("split", s);
    }
    if let Some(sp) = scaler_path {
        rec.arg("scaler", sp.display()).arg("fit_scaler", fit);
    }
    rec.output(out)?;
    ctx.finish(&rec, out)
}

fn spectrogram(ctx: &Ctx, records_path: &Path, overlap_ms: f64, out_dir: &Path, split: Option<Split>) -> Result<()> {
    let mut rec = ctx.record("spectrogram");
    rec.input(records_path)?;
    let records = pipeline::read_records_file(records_path)?;
    let selected = pipeline::select_split(&records, split);
    let (n, skipped) = pipeline::spectrogram_images(&selected, &ctx.cfg.preprocess, overlap_ms, out_dir)?;
    for s in &skipped {
        eprintln!("skipped {}: {}", s.utt_id, s.reason);
    }
    println!("{n} images written to {}", out_dir.display());
    rec.arg("records", records_path.display())
        .arg("out_dir", out_dir.display())
        .arg("overlap_ms", overlap_ms);
    rec.output_dir(out_dir)?;
    ctx.finish(&rec, &out_dir.join("."))
}

fn load_design(path: &Path) -> Result<DesignMatrix> {
    let rows = load_features(path)?;
    if rows.is_empty() {
        bail!("{} holds no feature rows", path.display());
    }
    Ok(DesignMatrix::from_feature_rows(&rows)?)
}

fn train(ctx: &Ctx, features: &Path, model: ModelChoice, out: &Path, val: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut rec = ctx.record("train");
    rec.input(features)?;
    let data = load_design(features)?;
    let (artifact, grid) = pipeline::train(model, &ctx.cfg, &data, seed)?;
    save_artifact(&artifact, out)?;
    if let Some(g) = &grid {
        println!("grid search best: k={} weighting={:?}", g.best.k, g.best.weighting);
    }
    println!("model {} written to {}", artifact.model_id(), out.display());
    if let Some(v) = val {
        rec.input(v)?;
        let (report, _) = pipeline::evaluate(&artifact, &load_design(v)?)?;
        print!("{}", report.render_text(&format!("{} (validation)", model.name())));
    }
    rec.arg("features", features.display())
        .arg("model", model.name())
        .arg("out", out.display());
    if let Some(s) = seed {
        rec.seed("model", s);
    }
    rec.output(out)?;
    ctx.finish(&rec, out)
}

fn train_head(ctx: &Ctx, embeddings: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut rec = ctx.record("train-head");
    rec.input(embeddings)?;
    let records = read_embeddings_file(embeddings)?;
    let (dim_a, dim_b) = embed::embedding_dims(&records).context("embedding file is empty")?;
    let data = embed::embeddings_to_design(&records)?;
    let mut train_cfg = ctx.cfg.train.clone().unwrap_or_else(TrainConfig::embedding_head);
    if let Some(s) = seed {
        train_cfg.seed = s;
    }
    let spec = ModelSpec::Neural {
        network: build_embedding_head(dim_a, dim_b)?,
        train: train_cfg.clone(),
    };
    let artifact = fit_model(&spec, &data)?;
    save_artifact(&artifact, out)?;
    println!("head {} ({} inputs) written to {}", artifact.model_id(), artifact.n_features(), out.display());
    rec.arg("embeddings", embeddings.display())
        .arg("out", out.display())
        .seed("train", train_cfg.seed);
    rec.output(out)?;
    ctx.finish(&rec, out)
}

fn read_embeddings_file(path: &Path) -> Result<Vec<embed::EmbeddingRecord>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_embeddings(std::io::BufReader::new(f))?)
}

fn evaluate(
    ctx: &Ctx,
    model: Option<PathBuf>,
    features: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    predictions: Option<PathBuf>,
    report_path: Option<PathBuf>,
    predictions_out: Option<PathBuf>,
) -> Result<()> {
    let mut rec = ctx.record("evaluate");
    let (report, name, preds) = if let Some(p) = &predictions {
        rec.input(p)?.arg("predictions", p.display());
        (pipeline::evaluate_predictions(p)?, "stored predictions".to_string(), None)
    } else {
        let model = model.expect("clap enforces --model");
        rec.input(&model)?.arg("model", model.display());
        let artifact = load_artifact(&model)?;
        let data = match (&features, &embeddings) {
            (Some(f), _) => {
                rec.input(f)?.arg("features", f.display());
                load_design(f)?
            }
            (None, Some(e)) => {
                rec.input(e)?.arg("embeddings", e.display());
                embed::embeddings_to_design(&read_embeddings_file(e)?)?
            }
            (None, None) => bail!("evaluate needs --features, --embeddings or --predictions"),
        };
        let (report, preds) = pipeline::evaluate(&artifact, &data)?;
        (report, format!("{:?} {}", artifact.kind, artifact.model_id()).to_lowercase(), Some(preds))
    };
    print!("{}", report.render_text(&name));
    let primary = report_path.clone().unwrap_or_else(|| PathBuf::from("report.json"));
    if let Some(rp) = &report_path {
        let mut body = serde_json::to_vec_pretty(&report)?;
        body.push(b'\n');
        std::fs::write(rp, body).with_context(|| format!("writing {}", rp.display()))?;
        rec.arg("report", rp.display()).output(rp)?;
    }
    if let (Some(po), Some(preds)) = (&predictions_out, &preds) {
        pipeline::write_predictions(po, preds)?;
        rec.arg("predictions_out", po.display()).output(po)?;
    }
    ctx.finish(&rec, &primary)
}

fn predict(ctx: &Ctx, model: &Path, wav: Option<PathBuf>, embeddings: Option<PathBuf>) -> Result<()> {
    let artifact = load_artifact(model)?;
    if let Some(e) = embeddings {
        let records = read_embeddings_file(&e)?;
        let rows = embed::rows_of(&records)?;
        let model_id = artifact.model_id();
        let p = predict_proba(&artifact, rows.view())?;
        for (r, row) in records.iter().zip(p.rows()) {
            let probs: Vec<f64> = row.to_vec();
            let resp = service::PredictionResponse {
                probabilities: ser_core::Emotion::ALL.iter().map(|&e| (e, probs[e.code()])).collect(),
                predicted: ser_core::Emotion::ALL[ser_models::argmax(&probs)],
                model_id: model_id.clone(),
            };
            println!("{}", serde_json::json!({ "utt_id": r.utt_id, "prediction": resp }));
        }
        return Ok(());
    }
    let wav = wav.expect("clap enforces --wav");
    let predictor = Predictor::new(artifact, ctx.cfg.preprocess.clone(), ctx.cfg.features.clone())?;
    let bytes = std::fs::read(&wav).with_context(|| format!("reading {}", wav.display()))?;
    let resp = predictor
        .predict_wav(&bytes)
        .map_err(|e| anyhow::anyhow!("{}: {e:?}", wav.display()))?;
    println!("{}", serde_json::to_string_pretty(&resp)?);
    Ok(())
}

fn serve(ctx: &Ctx, model: &Path, addr: Option<String>) -> Result<()> {
    let artifact = load_artifact(model)?;
    let predictor = Arc::new(Predictor::new(artifact, ctx.cfg.preprocess.clone(), ctx.cfg.features.clone())?);
    let addr = addr.unwrap_or_else(|| ctx.cfg.service.addr.clone());
    let max = ctx.cfg.service.max_body_bytes;
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(service::serve(predictor, &addr, max))
}
