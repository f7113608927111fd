//! The pipeline configuration document (TOML or JSON).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ser_core::augment::{uniform_targets, AugmentConfig};
use ser_core::corpus::{LabelOverride, SplitConfig};
use ser_core::features::FeatureConfig;
use ser_core::preprocess::PreprocessConfig;
use ser_core::Emotion;
use ser_models::knn::KnnParams;
use ser_models::logreg::LogRegParams;
use ser_models::nn::TrainConfig;
use ser_models::tree::{ForestParams, TreeParams};

pub const DEFAULT_MAX_BODY_BYTES: usize = 10 * 1024 * 1024;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub work_dir: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
}

/// Augmentation targets: one count for every class, or a count per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Targets {
    Uniform(usize),
    PerClass(BTreeMap<Emotion, usize>),
}

impl Default for Targets {
    fn default() -> Self {
        Targets::Uniform(0)
    }
}

impl Targets {
    pub fn resolve(&self) -> BTreeMap<Emotion, usize> {
        match self {
            Targets::Uniform(n) => uniform_targets(*n),
            Targets::PerClass(m) => m.clone(),
        }
    }

    /// Parses `2000` or `angry=10,calm=20`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(n) = s.parse::<usize>() {
            return Ok(Targets::Uniform(n));
        }
        let mut map = BTreeMap::new();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (name, count) = part
                .split_once('=')
                .with_context(|| format!("target '{part}' is not of the form class=count"))?;
            let emotion: Emotion = name.trim().parse().map_err(anyhow::Error::msg)?;
            let count: usize = count
                .trim()
                .parse()
                .with_context(|| format!("target count '{count}' is not a non-negative integer"))?;
            map.insert(emotion, count);
        }
        if map.is_empty() {
            bail!("empty augmentation targets");
        }
        Ok(Targets::PerClass(map))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub knn: KnnParams,
    /// Replace `knn` by the best grid-search candidate.
    pub knn_grid_search: bool,
    pub grid_folds: usize,
    pub grid_max_k: usize,
    pub logreg: LogRegParams,
    pub tree: TreeParams,
    pub forest: ForestParams,
    pub mlp_hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            knn: KnnParams::default(),
            knn_grid_search: false,
            grid_folds: 5,
            grid_max_k: 25,
            logreg: LogRegParams::default(),
            tree: TreeParams::default(),
            forest: ForestParams::default(),
            mlp_hidden: vec![100],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub addr: String,
    pub max_body_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub targets: Targets,
    pub paths: Paths,
    pub labels: Vec<LabelOverride>,
    pub preprocess: PreprocessConfig,
    pub augment: AugmentConfig,
    pub features: FeatureConfig,
    pub split: SplitConfig,
    pub model: ModelSection,
    /// Training schedule for neural models; the per-model preset applies
    /// when absent.
    pub train: Option<TrainConfig>,
    pub service: ServiceConfig,
}

impl PipelineConfig {
    /// Reads TOML (`.toml`) or JSON (anything else) and validates it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("paths.manifest", &self.paths.manifest), ("paths.noise_dir", &self.paths.noise_dir)] {
            if let Some(p) = p {
                if !p.exists() {
                    bail!("{name} refers to {}, which does not exist", p.display());
                }
            }
        }
        self.preprocess.validate().context("preprocess")?;
        self.augment.validate().context("augment")?;
        self.features.validate().context("features")?;
        self.split.validate().context("split")?;
        if let Some(t) = &self.train {
            t.validate().context("train")?;
        }
        if self.model.grid_folds < 2 || self.model.grid_max_k == 0 {
            bail!("model.grid_folds must be >= 2 and model.grid_max_k >= 1");
        }
        if self.service.max_body_bytes == 0 {
            bail!("service.max_body_bytes must be positive");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON rendering.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
