//! Manifest ingestion, label harmonization across the five corpora,
//! stratified splitting and count tables.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no mapping for label '{raw_label}' in dataset '{dataset}'")]
    Mapping { dataset: String, raw_label: String },
    #[error("manifest {path}, line {line}: {message}")]
    Manifest { path: String, line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("records file line {line}: {message}")]
    Records { line: usize, message: String },
    #[error("invalid split configuration: {0}")]
    Config(String),
    #[error("split precondition violated: {0}")]
    Precondition(String),
    #[error("leakage: {0}")]
    Leakage(String),
}

/// The seven target classes, in code order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Angry,
    Calm,
    Disgust,
    Fearful,
    Happy,
    Sad,
    Surprised,
}

pub const N_CLASSES: usize = 7;

impl Emotion {
    pub const ALL: [Emotion; N_CLASSES] = [
        Emotion::Angry,
        Emotion::Calm,
        Emotion::Disgust,
        Emotion::Fearful,
        Emotion::Happy,
        Emotion::Sad,
        Emotion::Surprised,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Angry => "angry",
            Emotion::Calm => "calm",
            Emotion::Disgust => "disgust",
            Emotion::Fearful => "fearful",
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
            Emotion::Surprised => "surprised",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown emotion '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dataset {
    #[serde(rename = "SAVEE")]
    Savee,
    #[serde(rename = "RAVDESS")]
    Ravdess,
    #[serde(rename = "TESS")]
    Tess,
    #[serde(rename = "IEMOCAP")]
    Iemocap,
    #[serde(rename = "CREMA-D")]
    CremaD,
}

impl Dataset {
    /// Row order of the count tables.
    pub const ALL: [Dataset; 5] = [
        Dataset::Savee,
        Dataset::Ravdess,
        Dataset::Tess,
        Dataset::Iemocap,
        Dataset::CremaD,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dataset::Savee => "SAVEE",
            Dataset::Ravdess => "RAVDESS",
            Dataset::Tess => "TESS",
            Dataset::Iemocap => "IEMOCAP",
            Dataset::CremaD => "CREMA-D",
        }
    }

    fn slug(self) -> &'static str {
        match self {
            Dataset::Savee => "savee",
            Dataset::Ravdess => "ravdess",
            Dataset::Tess => "tess",
            Dataset::Iemocap => "iemocap",
            Dataset::CremaD => "cremad",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.trim().to_ascii_uppercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match norm.as_str() {
            "SAVEE" => Ok(Dataset::Savee),
            "RAVDESS" => Ok(Dataset::Ravdess),
            "TESS" => Ok(Dataset::Tess),
            "IEMOCAP" => Ok(Dataset::Iemocap),
            "CREMAD" => Ok(Dataset::CremaD),
            _ => Err(format!("unknown dataset '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            _ => Err(format!("unknown split '{s}'")),
        }
    }
}

/// One labeled audio file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub path: PathBuf,
    pub dataset: Dataset,
    pub raw_label: String,
    pub label: Emotion,
    #[serde(default)]
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmented_from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
    /// The file at `path` already went through the preprocessing chain.
    #[serde(default)]
    pub prepared: bool,
}

/// Raw-label vocabulary per corpus. `None` marks a label that is dropped.
#[derive(Debug, Clone)]
pub struct LabelMapper {
    table: HashMap<(Dataset, String), Option<Emotion>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelOverride {
    pub dataset: Dataset,
    pub raw_label: String,
    /// Absent means "drop".
    #[serde(default)]
    pub emotion: Option<Emotion>,
}

impl Default for LabelMapper {
    fn default() -> Self {
        use Emotion::*;
        let mut table = HashMap::new();
        let mut add = |d: Dataset, labels: &[&str], e: Option<Emotion>| {
            for l in labels {
                table.insert((d, l.to_string()), e);
            }
        };
        // Common spellings shared by all corpora.
        for d in Dataset::ALL {
            add(d, &["neutral", "neu"], None);
            add(d, &["angry", "anger", "ang"], Some(Angry));
            add(d, &["disgust", "dis"], Some(Disgust));
            add(d, &["fearful", "fear", "fea"], Some(Fearful));
            add(d, &["happy", "happiness", "hap"], Some(Happy));
            add(d, &["sad", "sadness"], Some(Sad));
        }
        add(Dataset::CremaD, &["neu"], None);
        add(Dataset::Savee, &["n"], None);
        add(Dataset::Savee, &["a"], Some(Angry));
        add(Dataset::Savee, &["d"], Some(Disgust));
        add(Dataset::Savee, &["f"], Some(Fearful));
        add(Dataset::Savee, &["h"], Some(Happy));
        add(Dataset::Savee, &["sa"], Some(Sad));
        add(Dataset::Savee, &["su", "surprise", "surprised"], Some(Surprised));
        add(Dataset::Tess, &["ps", "pleasant_surprise", "pleasant surprise", "surprise", "surprised"], Some(Surprised));
        add(Dataset::Iemocap, &["xxx", "oth", "other", "fru", "frustration"], None);
        add(Dataset::Iemocap, &["exc", "excited", "excitement"], Some(Happy));
        add(Dataset::Iemocap, &["sur", "surprise", "surprised"], Some(Surprised));
        add(Dataset::Ravdess, &["calm"], Some(Calm));
        add(Dataset::Ravdess, &["surprise", "surprised"], Some(Surprised));
        // RAVDESS filename emotion codes.
        add(Dataset::Ravdess, &["01"], None);
        add(Dataset::Ravdess, &["02"], Some(Calm));
        add(Dataset::Ravdess, &["03"], Some(Happy));
        add(Dataset::Ravdess, &["04"], Some(Sad));
        add(Dataset::Ravdess, &["05"], Some(Angry));
        add(Dataset::Ravdess, &["06"], Some(Fearful));
        add(Dataset::Ravdess, &["07"], Some(Disgust));
        add(Dataset::Ravdess, &["08"], Some(Surprised));
        Self { table }
    }
}

impl LabelMapper {
    pub fn with_overrides(mut self, overrides: &[LabelOverride]) -> Self {
        for o in overrides {
            self.table
                .insert((o.dataset, o.raw_label.trim().to_lowercase()), o.emotion);
        }
        self
    }

    /// `Ok(None)` means the label is intentionally dropped.
    pub fn map(&self, dataset: Dataset, raw_label: &str) -> Result<Option<Emotion>, CorpusError> {
        self.table
            .get(&(dataset, raw_label.trim().to_lowercase()))
            .copied()
            .ok_or_else(|| CorpusError::Mapping {
                dataset: dataset.name().into(),
                raw_label: raw_label.into(),
            })
    }
}

/// Maps a corpus-specific label with the default tables.
pub fn map_label(dataset: &str, raw_label: &str) -> Result<Option<Emotion>, CorpusError> {
    let ds = Dataset::from_str(dataset).map_err(|_| CorpusError::Mapping {
        dataset: dataset.into(),
        raw_label: raw_label.into(),
    })?;
    LabelMapper::default().map(ds, raw_label)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedRow {
    pub line: usize,
    pub path: String,
    pub dataset: Dataset,
    pub raw_label: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ManifestReport {
    pub dropped: Vec<DroppedRow>,
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Parses a manifest (`path,dataset,raw_label[,speaker,gender]`). Relative
/// paths are resolved against `base_dir`.
pub fn parse_manifest<R: std::io::Read>(
    input: R,
    name: &str,
    base_dir: &Path,
    mapper: &LabelMapper,
) -> Result<(Vec<UtteranceRecord>, ManifestReport), CorpusError> {
    let merr = |line: usize, message: String| CorpusError::Manifest {
        path: name.into(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(|e| merr(1, e.to_string()))?.clone();
    let col = |n: &str| headers.iter().position(|h| h == n);
    let (Some(pc), Some(dc), Some(lc)) = (col("path"), col("dataset"), col("raw_label")) else {
        return Err(merr(1, "header must contain path, dataset and raw_label".into()));
    };
    let (sc, gc) = (col("speaker"), col("gender"));

    let mut records = Vec::new();
    let mut report = ManifestReport::default();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| merr(line, e.to_string()))?;
        let field = |c: usize| row.get(c).map(str::to_string).unwrap_or_default();
        let path_str = field(pc);
        if path_str.is_empty() {
            return Err(merr(line, "empty path".into()));
        }
        if !seen.insert(path_str.clone()) {
            return Err(merr(line, format!("duplicate path '{path_str}'")));
        }
        let ds_str = field(dc);
        let dataset = Dataset::from_str(&ds_str).map_err(|e| merr(line, e))?;
        let raw_label = field(lc);
        let label = mapper.map(dataset, &raw_label).map_err(|e| merr(line, e.to_string()))?;
        let Some(label) = label else {
            report.dropped.push(DroppedRow {
                line,
                path: path_str,
                dataset,
                raw_label,
            });
            continue;
        };
        let p = PathBuf::from(&path_str);
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let opt = |c: Option<usize>| c.map(field).filter(|s| !s.is_empty());
        records.push(UtteranceRecord {
            utt_id: format!("{}_{:05}_{}", dataset.slug(), line, sanitize(&stem)),
            path: if p.is_absolute() { p } else { base_dir.join(p) },
            dataset,
            raw_label,
            label,
            split: Split::Unassigned,
            augmented_from: None,
            speaker: opt(sc),
            gender: opt(gc),
            prepared: false,
        });
    }
    Ok((records, report))
}

pub fn load_manifest(
    path: &Path,
    mapper: &LabelMapper,
) -> Result<(Vec<UtteranceRecord>, ManifestReport), CorpusError> {
    let f = std::fs::File::open(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(f, &path.display().to_string(), base, mapper)
}

/// JSON Lines, one record per line.
pub fn write_records<W: Write>(mut out: W, records: &[UtteranceRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<UtteranceRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Records {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Records {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub val_fraction_of_train: f64,
    pub seed: u64,
    /// Keep every speaker's utterances on one side of each split.
    pub group_by_speaker: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            val_fraction_of_train: 0.2,
            seed: 42,
            group_by_speaker: false,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, f) in [("test_fraction", self.test_fraction), ("val_fraction_of_train", self.val_fraction_of_train)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(CorpusError::Config(format!("{name} must lie in (0, 1), got {f}")));
            }
        }
        Ok(())
    }
}

const EPS: f64 = 1e-9;

/// Per-class held-out counts.
///
/// Each class gets `round_half_up(fraction * n_c)`; the grand total is
/// `ceil(fraction * N)` and any difference is settled one record at a time
/// in order of the classes' fractional remainders (largest first when
/// adding, smallest first when removing; ties to the lower index). A class
/// never gives away all of its members.
pub fn allocate_holdout(counts: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let quotas: Vec<f64> = counts.iter().map(|&n| fraction * n as f64).collect();
    let cap = |n: usize| n.saturating_sub(1);
    let mut alloc: Vec<usize> = quotas
        .iter()
        .zip(counts)
        .map(|(q, &n)| ((q + 0.5 + EPS).floor() as usize).min(cap(n)))
        .collect();
    let target = ((fraction * total as f64 - EPS).ceil() as usize).min(counts.iter().map(|&n| cap(n)).sum());
    let remainders: Vec<f64> = quotas.iter().map(|q| q - (q + EPS).floor()).collect();

    let mut order: Vec<usize> = (0..counts.len()).collect();
    let current: usize = alloc.iter().sum();
    if current < target {
        order.sort_by(|&a, &b| remainders[b].total_cmp(&remainders[a]).then(a.cmp(&b)));
        let mut need = target - current;
        while need > 0 {
            let mut progressed = false;
            for &c in &order {
                if need > 0 && alloc[c] < cap(counts[c]) {
                    alloc[c] += 1;
                    need -= 1;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
    } else if current > target {
        order.sort_by(|&a, &b| remainders[a].total_cmp(&remainders[b]).then(a.cmp(&b)));
        let mut excess = current - target;
        while excess > 0 {
            let mut progressed = false;
            for &c in &order {
                if excess > 0 && alloc[c] > 0 {
                    alloc[c] -= 1;
                    excess -= 1;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
    }
    alloc
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SplitReport {
    pub held_out_per_class: BTreeMap<Emotion, usize>,
    pub warnings: Vec<String>,
    /// Augmented records removed because their source left the train pool.
    pub removed_augmented: Vec<String>,
}

fn class_members(records: &[UtteranceRecord], eligible: impl Fn(&UtteranceRecord) -> bool) -> [Vec<usize>; N_CLASSES] {
    let mut by_class: [Vec<usize>; N_CLASSES] = Default::default();
    for (i, r) in records.iter().enumerate() {
        if eligible(r) {
            by_class[r.label.code()].push(i);
        }
    }
    for members in by_class.iter_mut() {
        members.sort_by(|&a, &b| records[a].utt_id.cmp(&records[b].utt_id));
    }
    by_class
}

/// Moves `fraction` of each class from the eligible pool to `target` split.
fn holdout(
    records: &mut [UtteranceRecord],
    fraction: f64,
    seed: u64,
    salt: &str,
    target: Split,
    eligible: impl Fn(&UtteranceRecord) -> bool,
    report: &mut SplitReport,
) {
    let by_class = class_members(records, eligible);
    let counts: Vec<usize> = by_class
        .iter()
        .enumerate()
        .map(|(c, m)| {
            if m.len() < 2 && !m.is_empty() {
                report.warnings.push(format!(
                    "class {} has {} member(s); all kept in train",
                    Emotion::ALL[c],
                    m.len()
                ));
                0
            } else {
                m.len()
            }
        })
        .collect();
    let alloc = allocate_holdout(&counts, fraction);
    for (c, members) in by_class.iter().enumerate() {
        let emotion = Emotion::ALL[c];
        let mut shuffled = members.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{salt}/{emotion}")));
        shuffled.shuffle(&mut rng);
        for (k, &i) in shuffled.iter().enumerate() {
            records[i].split = if k < alloc[c] { target } else { Split::Train };
        }
        report.held_out_per_class.insert(emotion, alloc[c]);
    }
}

/// Speaker-grouped holdout: whole speakers move until the held-out share
/// reaches `fraction` of the eligible pool.
fn holdout_by_speaker(
    records: &mut [UtteranceRecord],
    fraction: f64,
    seed: u64,
    salt: &str,
    target: Split,
    eligible: impl Fn(&UtteranceRecord) -> bool,
    report: &mut SplitReport,
) {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if eligible(r) {
            let key = match &r.speaker {
                Some(s) => format!("{}/{}", r.dataset, s),
                None => format!("utt/{}", r.utt_id),
            };
            groups.entry(key).or_default().push(i);
        }
    }
    let total: usize = groups.values().map(Vec::len).sum();
    let want = (fraction * total as f64 - EPS).ceil() as usize;
    let mut keys: Vec<String> = groups.keys().cloned().collect();
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{salt}/speakers"))));
    let mut taken = 0;
    for key in keys {
        let members = &groups[&key];
        let side = if taken < want {
            taken += members.len();
            target
        } else {
            Split::Train
        };
        for &i in members {
            records[i].split = side;
        }
    }
    for e in Emotion::ALL {
        let n = records.iter().filter(|r| r.label == e && r.split == target).count();
        report.held_out_per_class.insert(e, n);
    }
}

/// Assigns every record to train or test. Records must be unassigned and
/// not augmented.
pub fn stratified_split(records: &mut [UtteranceRecord], cfg: &SplitConfig) -> Result<SplitReport, CorpusError> {
    cfg.validate()?;
    if let Some(r) = records.iter().find(|r| r.split != Split::Unassigned) {
        return Err(CorpusError::Precondition(format!("record {} already assigned to {}", r.utt_id, r.split)));
    }
    if let Some(r) = records.iter().find(|r| r.augmented_from.is_some()) {
        return Err(CorpusError::Precondition(format!(
            "augmented record {} cannot take part in the test split",
            r.utt_id
        )));
    }
    let mut report = SplitReport::default();
    if cfg.group_by_speaker {
        holdout_by_speaker(records, cfg.test_fraction, cfg.seed, "test", Split::Test, |_| true, &mut report);
    } else {
        holdout(records, cfg.test_fraction, cfg.seed, "test", Split::Test, |_| true, &mut report);
    }
    Ok(report)
}

/// Moves `val_fraction_of_train` of the original (non-augmented) train
/// records of each class to validation. Augmented records stay in train;
/// any whose source moved to validation are removed from the corpus.
pub fn assign_validation(
    records: Vec<UtteranceRecord>,
    cfg: &SplitConfig,
) -> Result<(Vec<UtteranceRecord>, SplitReport), CorpusError> {
    cfg.validate()?;
    let mut records = records;
    if let Some(r) = records.iter().find(|r| r.split == Split::Unassigned) {
        return Err(CorpusError::Precondition(format!("record {} has no split yet", r.utt_id)));
    }
    let eligible = |r: &UtteranceRecord| r.split == Split::Train && r.augmented_from.is_none();
    let mut report = SplitReport::default();
    if cfg.group_by_speaker {
        holdout_by_speaker(&mut records, cfg.val_fraction_of_train, cfg.seed, "val", Split::Val, eligible, &mut report);
    } else {
        holdout(&mut records, cfg.val_fraction_of_train, cfg.seed, "val", Split::Val, eligible, &mut report);
    }
    let train_ids: HashSet<String> = records
        .iter()
        .filter(|r| r.split == Split::Train && r.augmented_from.is_none())
        .map(|r| r.utt_id.clone())
        .collect();
    records.retain(|r| match &r.augmented_from {
        Some(src) if !train_ids.contains(src) => {
            report.removed_augmented.push(r.utt_id.clone());
            false
        }
        _ => true,
    });
    Ok((records, report))
}

/// Checks that augmented records sit in train and derive from train records.
pub fn check_leakage(records: &[UtteranceRecord]) -> Result<(), CorpusError> {
    let split_of: HashMap<&str, Split> = records.iter().map(|r| (r.utt_id.as_str(), r.split)).collect();
    for r in records {
        if let Some(src) = &r.augmented_from {
            if r.split != Split::Train {
                return Err(CorpusError::Leakage(format!("augmented record {} is in {}", r.utt_id, r.split)));
            }
            match split_of.get(src.as_str()) {
                Some(Split::Train) => {}
                Some(s) => {
                    return Err(CorpusError::Leakage(format!(
                        "augmented record {} derives from {} which is in {}",
                        r.utt_id, src, s
                    )))
                }
                None => {
                    return Err(CorpusError::Leakage(format!(
                        "augmented record {} derives from unknown record {}",
                        r.utt_id, src
                    )))
                }
            }
        }
    }
    Ok(())
}

/// Dataset × emotion counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CountTable {
    pub counts: [[usize; N_CLASSES]; 5],
}

impl CountTable {
    pub fn get(&self, dataset: Dataset, emotion: Emotion) -> usize {
        self.counts[Dataset::ALL.iter().position(|d| *d == dataset).unwrap()][emotion.code()]
    }

    pub fn column_total(&self, emotion: Emotion) -> usize {
        self.counts.iter().map(|row| row[emotion.code()]).sum()
    }

    pub fn row_total(&self, dataset: Dataset) -> usize {
        self.counts[Dataset::ALL.iter().position(|d| *d == dataset).unwrap()].iter().sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn render_text(&self) -> String {
        let mut out = format!("{:<14}", "Dataset");
        for e in Emotion::ALL {
            out.push_str(&format!("{:>10}", e.name()));
        }
        out.push_str(&format!("{:>10}\n", "Total"));
        for d in Dataset::ALL {
            out.push_str(&format!("{:<14}", d.name()));
            for e in Emotion::ALL {
                out.push_str(&format!("{:>10}", self.get(d, e)));
            }
            out.push_str(&format!("{:>10}\n", self.row_total(d)));
        }
        out.push_str(&format!("{:<14}", "Column Total"));
        for e in Emotion::ALL {
            out.push_str(&format!("{:>10}", self.column_total(e)));
        }
        out.push_str(&format!("{:>10}\n", self.total()));
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("dataset");
        for e in Emotion::ALL {
            out.push(',');
            out.push_str(e.name());
        }
        out.push_str(",total\n");
        for d in Dataset::ALL {
            out.push_str(d.name());
            for e in Emotion::ALL {
                out.push_str(&format!(",{}", self.get(d, e)));
            }
            out.push_str(&format!(",{}\n", self.row_total(d)));
        }
        out.push_str("total");
        for e in Emotion::ALL {
            out.push_str(&format!(",{}", self.column_total(e)));
        }
        out.push_str(&format!(",{}\n", self.total()));
        out
    }
}

impl std::ops::Add for CountTable {
    type Output = CountTable;

    fn add(mut self, rhs: CountTable) -> CountTable {
        for (a, b) in self.counts.iter_mut().flatten().zip(rhs.counts.iter().flatten()) {
            *a += b;
        }
        self
    }
}

pub fn corpus_stats<'a>(records: impl IntoIterator<Item = &'a UtteranceRecord>) -> CountTable {
    let mut t = CountTable::default();
    for r in records {
        let row = Dataset::ALL.iter().position(|d| *d == r.dataset).unwrap();
        t.counts[row][r.label.code()] += 1;
    }
    t
}
