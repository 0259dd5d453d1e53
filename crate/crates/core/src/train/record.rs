use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::{Regime, TrainConfig};
use crate::dataset::encode_rgb;
use crate::error::{Error, Result};
use crate::metrics::{write_rows_csv, EvalReport, SampleRow};
use crate::nets::ModelState;
use crate::tensor::Tensor;

pub const CONFIG_FILE: &str = "config.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const RUN_FILE: &str = "run.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    /// Unweighted loss components.
    pub losses: BTreeMap<String, f64>,
    /// The value that was differentiated.
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_losses: BTreeMap<String, f64>,
    pub val: Option<EvalReport>,
    /// Regime-specific diagnostics, e.g. translated-batch variance.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub diagnostics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub regime: Regime,
    pub config_hash: String,
    pub seed: u64,
    /// Digest of the counter's parameters before the first update.
    pub init_digest: String,
    #[serde(skip)]
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_mae: Option<f64>,
    pub best_checkpoint: Option<String>,
    /// Target-domain label files opened during the run; always 0 for a
    /// completed adaptation run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_label_reads: Option<usize>,
}

impl RunRecord {
    pub fn new(cfg: &TrainConfig, regime: Regime, init_digest: String) -> Self {
        Self {
            regime,
            config_hash: cfg.hash(),
            seed: cfg.seed,
            init_digest,
            steps: Vec::new(),
            epochs: Vec::new(),
            best_epoch: None,
            best_val_mae: None,
            best_checkpoint: None,
            target_label_reads: None,
        }
    }

    /// Per-step totals, in order.
    pub fn loss_curve(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.total).collect()
    }

    /// Validation MAE per epoch, where evaluated.
    pub fn val_mae(&self) -> Vec<Option<f64>> {
        self.epochs.iter().map(|e| e.val.as_ref().map(|v| v.mae)).collect()
    }
}

/// SHA-256 over parameter names, shapes and exact bit patterns.
pub fn state_digest(state: &ModelState<f32>) -> String {
    let mut h = Sha256::new();
    h.update(state.arch_id().as_bytes());
    for (k, t) in &state.params {
        h.update(k.as_bytes());
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// `runs/<run_id>/` on disk.
pub struct RunDir {
    root: PathBuf,
    records: BufWriter<File>,
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write(p: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(p, bytes).map_err(|e| Error::io(p, e))
}

impl RunDir {
    /// Create the layout and echo the normalised config.
    pub fn create(root: impl Into<PathBuf>, cfg: &TrainConfig) -> Result<Self> {
        let root = root.into();
        for sub in ["", "eval", "ckpt", "translate"] {
            mkdir(&root.join(sub))?;
        }
        write(&root.join(CONFIG_FILE), cfg.to_json())?;
        let path = root.join(RECORDS_FILE);
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            root,
            records: BufWriter::new(f),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn log_step(&mut self, rec: &StepRecord) -> Result<()> {
        let path = self.root.join(RECORDS_FILE);
        serde_json::to_writer(&mut self.records, rec)?;
        self.records.write_all(b"\n").map_err(|e| Error::io(&path, e))
    }

    pub fn log_eval(&mut self, epoch: usize, report: &EvalReport, rows: &[SampleRow]) -> Result<()> {
        let base = self.root.join("eval").join(format!("epoch-{epoch:04}"));
        write(&base.with_extension("json"), serde_json::to_string_pretty(report)?)?;
        let path = base.with_extension("csv");
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_rows_csv(f, rows)
    }

    /// Returns the path relative to the run root.
    pub fn save_checkpoint(&mut self, name: &str, ckpt: &Checkpoint) -> Result<String> {
        let rel = format!("ckpt/{name}.ckpt");
        ckpt.save(&self.root.join(&rel))?;
        Ok(rel)
    }

    /// Source and translation side by side, both `[3, H, W]` in `[0, 1]`.
    pub fn write_pair(&mut self, epoch: usize, k: usize, source: &Tensor<f32>, translated: &Tensor<f32>) -> Result<()> {
        let [3, h, w] = *source.shape() else {
            return Err(Error::Shape(format!("pair image shape {:?}", source.shape())));
        };
        if translated.shape() != source.shape() {
            return Err(Error::Shape("pair images differ in shape".into()));
        }
        let mut data = Vec::with_capacity(3 * h * 2 * w);
        for c in 0..3 {
            for y in 0..h {
                let row = (c * h + y) * w;
                data.extend_from_slice(&source.data()[row..row + w]);
                data.extend_from_slice(&translated.data()[row..row + w]);
            }
        }
        let side = Tensor::from_vec(&[3, h, 2 * w], data)?;
        let path = self.root.join("translate").join(format!("epoch-{epoch:04}-{k:02}.png"));
        write(&path, encode_rgb(&side)?)
    }

    pub fn finish(&mut self, record: &RunRecord) -> Result<()> {
        let path = self.root.join(RECORDS_FILE);
        self.records.flush().map_err(|e| Error::io(&path, e))?;
        write(&self.root.join(RUN_FILE), serde_json::to_string_pretty(record)?)
    }
}

/// Read `records.jsonl` back.
pub fn read_step_records(path: &Path) -> Result<Vec<StepRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
