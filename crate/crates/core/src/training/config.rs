//! Experiment configuration as a flat `key = value` file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datakit::OutlierRatios;
use crate::error::{Error, Result};
use crate::objectives::{MuSchedule, RankSign};

/// Where the dataset comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    /// Generated from the `synth_*` keys.
    Synthetic,
    /// A dataset directory (`view_1.csv`, ...).
    Directory(PathBuf),
}

/// Every knob of one experiment. Defaults form the synthetic preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub data: DataSource,
    pub synth_clusters: usize,
    pub synth_dims: Vec<usize>,
    pub synth_n: usize,
    pub synth_noise: f64,
    /// Min-max scale directory data before injection.
    pub normalize: bool,
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub missing_rate: f64,

    /// Encoder layer widths after the input, ending with the latent width.
    pub hidden: Vec<usize>,
    pub tau: f64,
    /// Temperature of the neighbor-alignment loss; `None` divides by nothing.
    pub na_tau: Option<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub eta: f64,
    pub k: usize,
    pub k_pos: usize,
    pub k_neg: usize,
    pub mu1: f64,
    pub mu2: f64,
    pub warm_epochs: usize,
    pub total_epochs: usize,
    pub impute_start: usize,
    pub knn_switch: usize,
    pub knn_refresh: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub bank_window: usize,
    pub rank_sign: RankSign,
    pub seed: u64,
    pub use_oa: bool,
    pub use_na: bool,
    pub use_sr: bool,
    /// Epochs between diagnostic AUC evaluations; 0 turns them off.
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            data: DataSource::Synthetic,
            synth_clusters: 5,
            synth_dims: vec![50, 50],
            synth_n: 1000,
            synth_noise: 0.05,
            normalize: true,
            rho1: 0.05,
            rho2: 0.05,
            rho3: 0.05,
            missing_rate: 0.3,
            hidden: vec![128, 32],
            tau: 0.5,
            na_tau: None,
            lambda1: 1.0,
            lambda2: 1.0,
            eta: 0.05,
            k: 6,
            k_pos: 4,
            k_neg: 6,
            mu1: 0.02,
            mu2: 0.2,
            warm_epochs: 100,
            total_epochs: 200,
            impute_start: 50,
            knn_switch: 50,
            knn_refresh: 5,
            batch_size: 256,
            learning_rate: 1e-3,
            bank_window: 8,
            rank_sign: RankSign::Printed,
            seed: 0,
            use_oa: true,
            use_na: true,
            use_sr: true,
            eval_interval: 1,
        }
    }
}

/// Named starting points for the benchmark datasets.
pub const PRESETS: [&str; 5] = ["synthetic", "bdgp", "landuse21", "scene15", "fashion"];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("invalid value {value:?} for {key}, expected on/off"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split([',', '-'])
        .map(|p| parse(key, p.trim()))
        .collect()
}

fn join(list: &[usize]) -> String {
    list.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    /// Defaults with a named dataset's widths and μ schedule applied.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        let (hidden, mu1, mu2): (&[usize], f64, f64) = match name {
            "synthetic" => return Ok(c),
            "bdgp" => (&[1024, 64], 0.01, 0.2),
            "landuse21" => (&[1024, 1024, 64], 0.02, 0.2),
            "scene15" => (&[1024, 1024, 64], 0.02, 0.4),
            "fashion" => (&[1024, 256], 0.05, 0.4),
            _ => {
                return Err(Error::config(format!(
                    "unknown preset {name:?}, expected one of {PRESETS:?}"
                )))
            }
        };
        c.hidden = hidden.to_vec();
        c.mu1 = mu1;
        c.mu2 = mu2;
        Ok(c)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "preset" => {
                let keep = (self.data.clone(), self.seed);
                *self = TrainConfig::preset(value)?;
                (self.data, self.seed) = keep;
            }
            "data" => {
                self.data = if value == "synthetic" {
                    DataSource::Synthetic
                } else {
                    DataSource::Directory(PathBuf::from(value))
                }
            }
            "synth_clusters" => self.synth_clusters = parse(key, value)?,
            "synth_dims" => self.synth_dims = parse_list(key, value)?,
            "synth_n" => self.synth_n = parse(key, value)?,
            "synth_noise" => self.synth_noise = parse(key, value)?,
            "normalize" => self.normalize = parse_bool(key, value)?,
            "rho1" => self.rho1 = parse(key, value)?,
            "rho2" => self.rho2 = parse(key, value)?,
            "rho3" => self.rho3 = parse(key, value)?,
            "missing_rate" => self.missing_rate = parse(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "na_tau" => {
                self.na_tau = match value {
                    "none" | "off" => None,
                    _ => Some(parse(key, value)?),
                }
            }
            "lambda1" => self.lambda1 = parse(key, value)?,
            "lambda2" => self.lambda2 = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "k_pos" => self.k_pos = parse(key, value)?,
            "k_neg" => self.k_neg = parse(key, value)?,
            "mu1" => self.mu1 = parse(key, value)?,
            "mu2" => self.mu2 = parse(key, value)?,
            "warm_epochs" => self.warm_epochs = parse(key, value)?,
            "total_epochs" => self.total_epochs = parse(key, value)?,
            "impute_start" => self.impute_start = parse(key, value)?,
            "knn_switch" => self.knn_switch = parse(key, value)?,
            "knn_refresh" => self.knn_refresh = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "bank_window" => self.bank_window = parse(key, value)?,
            "rank_sign" => self.rank_sign = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "use_oa" => self.use_oa = parse_bool(key, value)?,
            "use_na" => self.use_na = parse_bool(key, value)?,
            "use_sr" => self.use_sr = parse_bool(key, value)?,
            "eval_interval" => self.eval_interval = parse(key, value)?,
            _ => return Err(Error::config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(format!("expected key=value, got {pair:?}")))?;
        self.set(key.trim(), value)
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    /// A `preset` line, if any, must come first.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            c.set_pair(line)
                .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Every key in canonical order; parses back to an equal config.
    pub fn to_kv_string(&self) -> String {
        let data = match &self.data {
            DataSource::Synthetic => "synthetic".to_string(),
            DataSource::Directory(p) => p.display().to_string(),
        };
        let on = |b: bool| if b { "on" } else { "off" };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("data", data);
        kv("synth_clusters", self.synth_clusters.to_string());
        kv("synth_dims", join(&self.synth_dims));
        kv("synth_n", self.synth_n.to_string());
        kv("synth_noise", format!("{:?}", self.synth_noise));
        kv("normalize", on(self.normalize).into());
        kv("rho1", format!("{:?}", self.rho1));
        kv("rho2", format!("{:?}", self.rho2));
        kv("rho3", format!("{:?}", self.rho3));
        kv("missing_rate", format!("{:?}", self.missing_rate));
        kv("hidden", join(&self.hidden));
        kv("tau", format!("{:?}", self.tau));
        kv("na_tau", self.na_tau.map_or("none".into(), |t| format!("{t:?}")));
        kv("lambda1", format!("{:?}", self.lambda1));
        kv("lambda2", format!("{:?}", self.lambda2));
        kv("eta", format!("{:?}", self.eta));
        kv("k", self.k.to_string());
        kv("k_pos", self.k_pos.to_string());
        kv("k_neg", self.k_neg.to_string());
        kv("mu1", format!("{:?}", self.mu1));
        kv("mu2", format!("{:?}", self.mu2));
        kv("warm_epochs", self.warm_epochs.to_string());
        kv("total_epochs", self.total_epochs.to_string());
        kv("impute_start", self.impute_start.to_string());
        kv("knn_switch", self.knn_switch.to_string());
        kv("knn_refresh", self.knn_refresh.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("learning_rate", format!("{:?}", self.learning_rate));
        kv("bank_window", self.bank_window.to_string());
        kv("rank_sign", self.rank_sign.to_string());
        kv("seed", self.seed.to_string());
        kv("use_oa", on(self.use_oa).into());
        kv("use_na", on(self.use_na).into());
        kv("use_sr", on(self.use_sr).into());
        kv("eval_interval", self.eval_interval.to_string());
        s
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_kv_string().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn ratios(&self) -> OutlierRatios {
        OutlierRatios {
            rho1: self.rho1,
            rho2: self.rho2,
            rho3: self.rho3,
        }
    }

    pub fn schedule(&self) -> Result<MuSchedule> {
        MuSchedule::new(self.mu1, self.mu2, self.warm_epochs, self.total_epochs)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("synth_clusters", self.synth_clusters),
            ("synth_n", self.synth_n),
            ("k", self.k),
            ("k_pos", self.k_pos),
            ("k_neg", self.k_neg),
            ("total_epochs", self.total_epochs),
            ("knn_refresh", self.knn_refresh),
            ("batch_size", self.batch_size),
            ("bank_window", self.bank_window),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if self.synth_clusters < 2 && self.data == DataSource::Synthetic {
            return Err(Error::config("synthetic data needs at least two clusters"));
        }
        if self.synth_dims.len() < 2 || self.synth_dims.contains(&0) {
            return Err(Error::config("synth_dims needs two or more positive widths"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("hidden needs one or more positive widths"));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::config(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if self.k_pos > self.k || self.k_neg > self.k {
            return Err(Error::config("k_pos and k_neg may not exceed k"));
        }
        if self.impute_start > self.total_epochs {
            return Err(Error::config("impute_start exceeds total_epochs"));
        }
        if !(self.tau > 0.0) || self.na_tau.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::config("temperatures must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.synth_noise >= 0.0) {
            return Err(Error::config("learning_rate must be positive and synth_noise nonnegative"));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::config("loss weights must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::config("missing_rate must lie in [0, 1)"));
        }
        self.ratios().validate()?;
        self.schedule()?;
        Ok(())
    }

    /// Effective term weights for epoch `epoch` with ablations applied.
    pub fn weights_at(&self, epoch: usize) -> Result<crate::objectives::LossWeights> {
        let mu = if self.use_sr { self.schedule()?.mu_at(epoch)? } else { 0.0 };
        Ok(crate::objectives::LossWeights {
            lambda1: if self.use_oa { self.lambda1 } else { 0.0 },
            lambda2: if self.use_na { self.lambda2 } else { 0.0 },
            mu,
        })
    }
}
