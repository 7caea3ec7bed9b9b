//! On-disk layout of a run directory and the files in it.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sno_core::distributions::{DigitPairSpec, LatticeMixtureSpec, SampleBatch};
use sno_core::numerics::{write_atomic, Checkpoint};

use crate::config::{hash_bytes, Mode};
use crate::CliError;

#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn config(&self) -> PathBuf {
        self.path("config.toml")
    }
    pub fn data_manifest(&self) -> PathBuf {
        self.path("data/manifest.json")
    }
    pub fn train_samples(&self) -> PathBuf {
        self.path("data/train.snop")
    }
    pub fn test_samples(&self) -> PathBuf {
        self.path("data/test.snop")
    }
    pub fn digit_images(&self) -> PathBuf {
        self.path("data/digits-images.idx")
    }
    pub fn digit_labels(&self) -> PathBuf {
        self.path("data/digits-labels.idx")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.path("checkpoint.snop")
    }
    pub fn metrics(&self) -> PathBuf {
        self.path("metrics.csv")
    }
    pub fn latent_trace(&self) -> PathBuf {
        self.path("latent_trace.csv")
    }
    pub fn timings(&self) -> PathBuf {
        self.path("timings.csv")
    }
    pub fn eval(&self) -> PathBuf {
        self.path("eval.csv")
    }
    pub fn scatter(&self, family_id: &str) -> PathBuf {
        self.path(&format!("scatter/{family_id}.csv"))
    }
    pub fn samples(&self, family_id: &str) -> PathBuf {
        self.path(&format!("samples/{family_id}.csv"))
    }
    pub fn fewshot(&self) -> PathBuf {
        self.path("fewshot.csv")
    }
    pub fn baseline_dir(&self) -> RunDir {
        RunDir::new(self.path("baseline"))
    }
    pub fn baseline_report(&self) -> PathBuf {
        self.path("baseline.csv")
    }
    pub fn run_manifest(&self) -> PathBuf {
        self.path("run_manifest.json")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilySource {
    Lattice(LatticeMixtureSpec),
    Digits(DigitPairSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyRecord {
    pub id: String,
    pub split: SplitName,
    pub samples: usize,
    pub seed: u64,
    pub source: FamilySource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub mode: Mode,
    pub seed: u64,
    pub families: Vec<FamilyRecord>,
    /// File name to SHA-256 of its bytes.
    pub files: BTreeMap<String, String>,
}

impl DataManifest {
    pub fn split(&self, split: SplitName) -> impl Iterator<Item = &FamilyRecord> {
        self.families.iter().filter(move |f| f.split == split)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        write_atomic(path, s.as_bytes())?;
        Ok(())
    }
}

/// Writes sample sets as one checkpoint container keyed by family id.
pub fn save_samples(path: &Path, batches: &[SampleBatch]) -> Result<String, CliError> {
    let mut ck = Checkpoint::new();
    for b in batches {
        ck.push(b.family_id.clone(), b.data.clone())?;
    }
    let bytes = ck.to_bytes();
    write_atomic(path, &bytes)?;
    Ok(hash_bytes(&bytes))
}

pub fn load_samples(path: &Path, records: &[&FamilyRecord]) -> Result<Vec<SampleBatch>, CliError> {
    let ck = Checkpoint::load(path)?;
    records
        .iter()
        .map(|r| Ok(SampleBatch::new(ck.require(&r.id)?.clone(), r.id.clone(), r.seed)))
        .collect()
}

/// Appends rows under a fixed header, writing the header only for a new file.
pub fn append_csv<R: Serialize>(path: &Path, header: &[&str], rows: &[R]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let fresh = !path.exists() || fs::metadata(path)?.len() == 0;
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a complete CSV atomically.
pub fn write_csv<R: Serialize>(path: &Path, header: &[&str], rows: &[R]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

pub const METRICS_HEADER: [&str; 4] = ["epoch", "step", "loss", "split"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub split: String,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, CliError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != METRICS_HEADER {
        return Err(CliError::Io(format!("{}: unexpected header {header:?}", path.display())));
    }
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Drops metric rows past `step`, so a resumed run re-emits them exactly once.
pub fn truncate_metrics(path: &Path, step: u64) -> Result<(), CliError> {
    let rows: Vec<MetricsRow> = read_metrics(path)?.into_iter().filter(|r| r.step <= step).collect();
    if path.exists() {
        write_csv(path, &METRICS_HEADER, &rows)?;
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub wall_clock_ms: u128,
    pub seed: u64,
    pub artifacts: Vec<String>,
}

/// Provenance of a run directory, rewritten atomically at the end of every command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn load_or_default(path: &Path) -> Result<Self, CliError> {
        if !path.exists() {
            return Ok(Self::default());
        }
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn record(path: &Path, config_hash: &str, stage: &str, rec: StageRecord) -> Result<(), CliError> {
        let mut m = Self::load_or_default(path)?;
        m.config_hash = config_hash.to_owned();
        m.code_version = env!("CARGO_PKG_VERSION").to_owned();
        m.stages.insert(stage.to_owned(), rec);
        let mut s = serde_json::to_string_pretty(&m)?;
        s.push('\n');
        write_atomic(path, s.as_bytes())?;
        Ok(())
    }
}
