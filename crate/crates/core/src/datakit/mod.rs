//! Multi-view datasets: on-disk format, normalization, synthetic generation,
//! outlier injection and missing-view masking.

mod inject;
mod io;
mod missing;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub use inject::{
    inject_attribute, inject_class, inject_class_attribute, inject_outliers, OutlierRatios,
};
pub use io::{load_dataset, save_dataset};
pub use missing::apply_missing;
pub use synth::synthesize;

/// Ground-truth role of an instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutlierType {
    Inlier,
    Attribute,
    Class,
    ClassAttribute,
}

impl OutlierType {
    pub const ALL: [OutlierType; 4] = [
        OutlierType::Inlier,
        OutlierType::Attribute,
        OutlierType::Class,
        OutlierType::ClassAttribute,
    ];

    pub const OUTLIER_TYPES: [OutlierType; 3] = [
        OutlierType::Attribute,
        OutlierType::Class,
        OutlierType::ClassAttribute,
    ];

    pub fn code(self) -> u8 {
        match self {
            OutlierType::Inlier => 0,
            OutlierType::Attribute => 1,
            OutlierType::Class => 2,
            OutlierType::ClassAttribute => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => OutlierType::Inlier,
            1 => OutlierType::Attribute,
            2 => OutlierType::Class,
            3 => OutlierType::ClassAttribute,
            _ => return None,
        })
    }

    pub fn is_outlier(self) -> bool {
        self != OutlierType::Inlier
    }

    pub fn name(self) -> &'static str {
        match self {
            OutlierType::Inlier => "inlier",
            OutlierType::Attribute => "attribute",
            OutlierType::Class => "class",
            OutlierType::ClassAttribute => "class-attribute",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }
}

/// One recorded transformation of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum ProvenanceStep {
    Loaded { directory: String },
    Synthesized { clusters: usize, dims: Vec<usize>, n: usize, noise: f64, seed: u64 },
    Normalized,
    InjectedAttribute { rho: f64, count: usize, seed: u64 },
    InjectedClass { rho: f64, pairs: usize, seed: u64 },
    InjectedClassAttribute { rho: f64, pairs: usize, seed: u64 },
    Masked { rate: f64, count: usize, seed: u64 },
}

/// Per-view feature matrices with a presence mask and optional labels.
///
/// Rows of absent views are kept as zeros and are never read as data.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewDataset {
    pub views: Vec<Matrix>,
    /// `presence[i][v]` is true when instance `i` has view `v`.
    pub presence: Vec<Vec<bool>>,
    pub labels: Option<Vec<OutlierType>>,
    pub provenance: Vec<ProvenanceStep>,
}

impl MultiViewDataset {
    /// Fully observed, unlabeled dataset.
    pub fn new(views: Vec<Matrix>) -> Result<Self> {
        let n = views.first().map_or(0, Matrix::rows);
        let ds = MultiViewDataset {
            presence: vec![vec![true; views.len()]; n],
            views,
            labels: None,
            provenance: Vec::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn num_instances(&self) -> usize {
        self.presence.len()
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.views.iter().map(Matrix::cols).collect()
    }

    #[inline]
    pub fn is_present(&self, i: usize, v: usize) -> bool {
        self.presence[i][v]
    }

    pub fn is_complete(&self, i: usize) -> bool {
        self.presence[i].iter().all(|&p| p)
    }

    /// Instances that have view `v`, ascending.
    pub fn present_rows(&self, v: usize) -> Vec<usize> {
        (0..self.num_instances())
            .filter(|&i| self.presence[i][v])
            .collect()
    }

    /// Instances that have every view, ascending.
    pub fn complete_rows(&self) -> Vec<usize> {
        (0..self.num_instances())
            .filter(|&i| self.is_complete(i))
            .collect()
    }

    /// Fraction of instances missing at least one view.
    pub fn missing_rate(&self) -> f64 {
        let n = self.num_instances();
        if n == 0 {
            return 0.0;
        }
        (n - self.complete_rows().len()) as f64 / n as f64
    }

    pub fn labels_or_inliers(&self) -> Vec<OutlierType> {
        self.labels
            .clone()
            .unwrap_or_else(|| vec![OutlierType::Inlier; self.num_instances()])
    }

    pub fn count_label(&self, label: OutlierType) -> usize {
        self.labels
            .as_ref()
            .map_or(0, |l| l.iter().filter(|&&x| x == label).count())
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::contract("dataset has no views"));
        }
        let n = self.num_instances();
        if self.views.iter().any(|v| v.rows() != n) {
            return Err(Error::contract("view row counts differ from the presence mask"));
        }
        for (i, row) in self.presence.iter().enumerate() {
            if row.len() != self.views.len() {
                return Err(Error::contract(format!("presence row {i} has the wrong width")));
            }
            if !row.iter().any(|&p| p) {
                return Err(Error::contract(format!("instance {i} has no views")));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::contract("label count differs from instance count"));
            }
        }
        Ok(())
    }

    /// Per-view, per-feature min-max scaling to [0, 1] over present rows.
    /// Constant features become 0.
    pub fn normalize(&mut self) {
        for v in 0..self.views.len() {
            let rows = self.present_rows(v);
            let view = &mut self.views[v];
            for c in 0..view.cols() {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for &i in &rows {
                    let x = view.get(i, c);
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
                let span = hi - lo;
                for &i in &rows {
                    let x = view.get(i, c);
                    view.set(i, c, if span > 0.0 { (x - lo) / span } else { 0.0 });
                }
            }
        }
        self.provenance.push(ProvenanceStep::Normalized);
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }
}

/// `ceil(ratio * n)` that ignores floating-point dust above an integer.
pub(crate) fn ratio_count(ratio: f64, n: usize) -> usize {
    let exact = ratio * n as f64;
    let rounded = exact.round();
    if (exact - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        exact.ceil() as usize
    }
}
