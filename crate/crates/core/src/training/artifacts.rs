//! Files written by an experiment, the checkpoint container and sweeps.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{AdamState, AutoencoderStack};
use crate::datakit::OutlierType;
use crate::detection::{histogram_csv, score_histogram, total_score, ScoreReport};
use crate::error::{Error, Result};

use super::config::TrainConfig;
use super::pipeline::{run_experiment, ExperimentResult, LOSS_CSV_HEADER};

pub const CHECKPOINT_FORMAT: &str = "rcpmod-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const HISTOGRAM_BINS: usize = 20;

/// Trained parameters and optimizer state, tied to the config that made
/// them. Stored as JSON; floats round-trip exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    /// Canonical `key = value` text of the config.
    pub config: String,
    pub epochs: usize,
    pub stack: AutoencoderStack,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn new(cfg: &TrainConfig, stack: AutoencoderStack, adam: AdamState) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: cfg.hash(),
            config: cfg.to_kv_string(),
            epochs: cfg.total_epochs,
            stack,
            adam,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        TrainConfig::parse_str(&self.config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::format(path, e.to_string()))?;
        write_file(path, &text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported checkpoint {} v{}", ck.format, ck.version),
            ));
        }
        if ck.train_config()?.hash() != ck.config_hash {
            return Err(Error::format(path, "config hash does not match the stored config"));
        }
        Ok(ck)
    }
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Summary written to `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: Option<f64>,
    pub per_type_auc: BTreeMap<String, f64>,
    pub config_hash: String,
    pub seed: u64,
    pub epochs: usize,
    pub wall_clock_seconds: f64,
    pub peak_auc: Option<f64>,
    pub peak_epoch: Option<usize>,
    pub instances: usize,
    pub imputation_cosine: Option<ImputationSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationSummary {
    pub crt: f64,
    pub mean: f64,
    pub zero: f64,
}

impl Metrics {
    pub fn from_result(result: &ExperimentResult) -> Self {
        let peak = result.peak_auc();
        Metrics {
            auc: result.report.auc,
            per_type_auc: result.report.per_type_auc.clone(),
            config_hash: result.config.hash(),
            seed: result.config.seed,
            epochs: result.config.total_epochs,
            wall_clock_seconds: result.wall_clock_seconds,
            peak_auc: peak.map(|p| p.1),
            peak_epoch: peak.map(|p| p.0),
            instances: result.report.rows.len(),
            imputation_cosine: result.imputation.as_ref().map(|q| ImputationSummary {
                crt: q.crt_cosine,
                mean: q.mean_cosine,
                zero: q.zero_cosine,
            }),
        }
    }
}

pub fn loss_curves_csv(result: &ExperimentResult) -> String {
    let mut out = format!("{LOSS_CSV_HEADER}\n");
    for log in &result.model.history {
        out.push_str(&log.csv_row());
        out.push('\n');
    }
    out
}

/// Writes `scores.csv`, `metrics.json`, `loss_curves.csv`,
/// `histogram.csv`, `checkpoint.json`, `config.txt`, `neighbors.csv` and,
/// with ground truth, `imputation_quality.csv` into `dir`.
pub fn write_artifacts(result: &ExperimentResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("scores.csv"), &result.report.to_csv())?;
    let metrics = serde_json::to_string_pretty(&Metrics::from_result(result))
        .map_err(|e| Error::format(dir.join("metrics.json"), e.to_string()))?;
    write_file(&dir.join("metrics.json"), &metrics)?;
    write_file(&dir.join("loss_curves.csv"), &loss_curves_csv(result))?;
    write_file(
        &dir.join("histogram.csv"),
        &histogram_csv(&score_histogram(&result.report, HISTOGRAM_BINS)),
    )?;
    write_file(&dir.join("config.txt"), &result.config.to_kv_string())?;
    Checkpoint::new(&result.config, result.model.stack.clone(), result.model.adam.clone())
        .save(&dir.join("checkpoint.json"))?;
    if let Some(ix) = &result.model.index {
        ix.write_csv(&dir.join("neighbors.csv"))?;
    }
    if let Some(q) = &result.imputation {
        write_file(&dir.join("imputation_quality.csv"), &q.to_csv())?;
    }
    Ok(())
}

/// Reads a `scores.csv` back; label and type columns are optional.
pub fn load_scores(path: &Path) -> Result<ScoreReport> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(c_r), Some(c_c)) = (col("s_r"), col("s_c")) else {
        return Err(Error::format(path, "missing s_r or s_c column"));
    };
    let c_type = col("type");
    let (mut s_r, mut s_c, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let num = |c: usize| -> Result<f64> {
            record
                .get(c)
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| Error::format(path, format!("row {}: non-numeric score", n + 1)))
        };
        s_r.push(num(c_r)?);
        s_c.push(num(c_c)?);
        if let Some(c) = c_type {
            let name = record.get(c).unwrap_or("");
            let t = OutlierType::from_name(name)
                .ok_or_else(|| Error::format(path, format!("row {}: unknown type {name:?}", n + 1)))?;
            labels.push(t);
        }
    }
    total_score(&s_r, &s_c, c_type.map(|_| labels.as_slice()))
}

/// One grid point of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub auc: Option<f64>,
}

/// Runs one experiment per value of `key`, all with the same seed. Rows
/// come back sorted by value (numerically when every value is a number).
/// With `dir`, each point's artifacts go to `dir/<key>=<value>/` and the
/// table to `dir/sweep.csv`.
pub fn sweep(base: &TrainConfig, key: &str, values: &[String], dir: Option<&Path>) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let mut ordered: Vec<String> = values.to_vec();
    if ordered.iter().all(|v| v.parse::<f64>().is_ok()) {
        ordered.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    } else {
        ordered.sort();
    }
    let mut rows = Vec::with_capacity(ordered.len());
    for value in ordered {
        let mut cfg = base.clone();
        cfg.set(key, &value)?;
        let result = run_experiment(&cfg)?;
        if let Some(dir) = dir {
            write_artifacts(&result, &dir.join(format!("{key}={value}")))?;
        }
        rows.push(SweepRow {
            value,
            auc: result.report.auc,
        });
    }
    if let Some(dir) = dir {
        write_file(&dir.join("sweep.csv"), &sweep_csv(key, &rows))?;
    }
    Ok(rows)
}

pub fn sweep_csv(key: &str, rows: &[SweepRow]) -> String {
    let mut out = format!("{key},auc\n");
    for r in rows {
        out.push_str(&format!("{},{}\n", r.value, r.auc.map_or(String::new(), |a| format!("{a:?}"))));
    }
    out
}
