//! Latent-space imputation of missing views by cross-view relation transfer:
//! a missing latent is the mean of the counterparts, in the missing view, of
//! the instance's nearest neighbors found in a view it does have.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neighbors::{build_knn, ViewNeighbors};
use crate::numeric::Matrix;

/// Provenance of one latent row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryStatus {
    /// Encoded from an observed input.
    Observed,
    /// Filled in by imputation.
    Imputed,
    /// No value yet; the row is an all-zero placeholder.
    Missing,
}

/// Latents of every instance in every view, with per-entry status.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentViews {
    pub latents: Vec<Matrix>,
    pub status: Vec<Vec<EntryStatus>>,
    /// Epoch at which each imputed entry was first filled.
    pub first_imputed: Vec<Vec<Option<usize>>>,
}

impl LatentViews {
    /// Observed latents given per view as `(instance ids, rows)`; every
    /// other entry starts Missing.
    pub fn from_observed(num_instances: usize, latent_dim: usize, observed: &[(Vec<usize>, Matrix)]) -> Result<Self> {
        let mut latents = Vec::with_capacity(observed.len());
        let mut status = Vec::with_capacity(observed.len());
        for (ids, rows) in observed {
            if ids.len() != rows.rows() || rows.cols() != latent_dim {
                return Err(Error::contract("observed latent rows do not match their ids"));
            }
            let mut m = Matrix::zeros(num_instances, latent_dim);
            let mut s = vec![EntryStatus::Missing; num_instances];
            for (k, &i) in ids.iter().enumerate() {
                m.row_mut(i).copy_from_slice(rows.row(k));
                s[i] = EntryStatus::Observed;
            }
            latents.push(m);
            status.push(s);
        }
        Ok(LatentViews {
            first_imputed: vec![vec![None; num_instances]; observed.len()],
            latents,
            status,
        })
    }

    pub fn num_views(&self) -> usize {
        self.latents.len()
    }

    pub fn num_instances(&self) -> usize {
        self.status.first().map_or(0, Vec::len)
    }

    pub fn latent_dim(&self) -> usize {
        self.latents.first().map_or(0, Matrix::cols)
    }

    pub fn rows_with(&self, v: usize, wanted: EntryStatus) -> Vec<usize> {
        (0..self.num_instances())
            .filter(|&i| self.status[v][i] == wanted)
            .collect()
    }

    /// Instances with a value (observed or imputed) in view `v`.
    pub fn available_rows(&self, v: usize) -> Vec<usize> {
        (0..self.num_instances())
            .filter(|&i| self.status[v][i] != EntryStatus::Missing)
            .collect()
    }

    /// True when instance `i` has a value in every view.
    pub fn is_filled(&self, i: usize) -> bool {
        self.status.iter().all(|s| s[i] != EntryStatus::Missing)
    }

    pub fn missing_entries(&self) -> usize {
        self.status
            .iter()
            .flatten()
            .filter(|&&s| s == EntryStatus::Missing)
            .count()
    }
}

/// Neighbor tables over the observed latents of each view, used as the
/// source side of imputation. Views with too few observed rows get `None`.
pub fn observed_neighbor_tables(latents: &LatentViews, k: usize) -> Vec<Option<ViewNeighbors>> {
    (0..latents.num_views())
        .map(|v| build_knn(&latents.latents[v], &latents.rows_with(v, EntryStatus::Observed), k).ok())
        .collect()
}

/// Result of imputing one entry.
#[derive(Clone, Debug, PartialEq)]
pub enum CrtOutcome {
    Imputed(Vec<f64>),
    /// Every neighbor counterpart is unobserved in the target view.
    Deferred,
}

/// Imputes instance `i` in `target_view`.
///
/// For each source view where `i` is observed, the neighbors of `i` in that
/// view are mapped to their rows in the target view; counterparts not
/// observed there are dropped and the rest averaged. The per-source averages
/// are then averaged.
pub fn crt_impute(
    latents: &LatentViews,
    tables: &[Option<ViewNeighbors>],
    target_view: usize,
    instance: usize,
) -> Result<CrtOutcome> {
    if target_view >= latents.num_views() || instance >= latents.num_instances() {
        return Err(Error::contract("imputation target out of range"));
    }
    if latents.status[target_view][instance] == EntryStatus::Observed {
        return Err(Error::contract(format!(
            "instance {instance} is observed in view {target_view}"
        )));
    }
    let d = latents.latent_dim();
    let target = &latents.latents[target_view];
    let mut estimates = Vec::new();
    let mut had_source = false;
    for (u, table) in tables.iter().enumerate() {
        if u == target_view || latents.status[u][instance] != EntryStatus::Observed {
            continue;
        }
        had_source = true;
        let Some(neighbors) = table.as_ref().and_then(|t| t.neighbors(instance)) else {
            continue;
        };
        let usable: Vec<usize> = neighbors
            .into_iter()
            .filter(|&j| latents.status[target_view][j] == EntryStatus::Observed)
            .collect();
        if usable.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; d];
        for &j in &usable {
            for (m, x) in mean.iter_mut().zip(target.row(j)) {
                *m += x;
            }
        }
        let inv = 1.0 / usable.len() as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        estimates.push(mean);
    }
    if !had_source {
        return Err(Error::contract(format!("instance {instance} has no observed source view")));
    }
    if estimates.is_empty() {
        return Ok(CrtOutcome::Deferred);
    }
    let inv = 1.0 / estimates.len() as f64;
    let mut out = vec![0.0; d];
    for e in &estimates {
        for (o, x) in out.iter_mut().zip(e) {
            *o += x * inv;
        }
    }
    Ok(CrtOutcome::Imputed(out))
}

/// Counts from one imputation pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImputeSummary {
    /// `calls[v]`: entries of view `v` attempted.
    pub calls: Vec<usize>,
    pub imputed: usize,
    /// `(instance, view)` entries left without a new value.
    pub deferred: Vec<(usize, usize)>,
}

/// Attempts every non-observed entry, view by view in ascending instance
/// order, against the current observed latents. Deferred entries keep
/// whatever value they had.
pub fn impute_all(latents: &mut LatentViews, k: usize, epoch: usize) -> Result<ImputeSummary> {
    let tables = observed_neighbor_tables(latents, k);
    let snapshot = latents.clone();
    let mut summary = ImputeSummary {
        calls: vec![0; latents.num_views()],
        ..Default::default()
    };
    for v in 0..latents.num_views() {
        for i in 0..latents.num_instances() {
            if snapshot.status[v][i] == EntryStatus::Observed {
                continue;
            }
            summary.calls[v] += 1;
            match crt_impute(&snapshot, &tables, v, i)? {
                CrtOutcome::Imputed(z) => {
                    latents.latents[v].row_mut(i).copy_from_slice(&z);
                    latents.status[v][i] = EntryStatus::Imputed;
                    latents.first_imputed[v][i].get_or_insert(epoch);
                    summary.imputed += 1;
                }
                CrtOutcome::Deferred => summary.deferred.push((i, v)),
            }
        }
    }
    Ok(summary)
}

/// [`impute_all`], then entries still Missing are retried with growing
/// neighbor counts until an observed counterpart turns up. Used before
/// scoring, where every instance needs a value in every view.
pub fn impute_complete(latents: &mut LatentViews, k: usize, epoch: usize) -> Result<ImputeSummary> {
    let mut summary = impute_all(latents, k, epoch)?;
    let mut wider = k;
    while latents.missing_entries() > 0 {
        let max_k = (0..latents.num_views())
            .map(|v| latents.rows_with(v, EntryStatus::Observed).len().saturating_sub(1))
            .max()
            .unwrap_or(0);
        if wider >= max_k {
            return Err(Error::contract("imputation cannot find any observed counterpart"));
        }
        wider = (wider * 2).min(max_k);
        let tables = observed_neighbor_tables(latents, wider);
        let snapshot = latents.clone();
        for v in 0..latents.num_views() {
            for i in snapshot.rows_with(v, EntryStatus::Missing) {
                if let CrtOutcome::Imputed(z) = crt_impute(&snapshot, &tables, v, i)? {
                    latents.latents[v].row_mut(i).copy_from_slice(&z);
                    latents.status[v][i] = EntryStatus::Imputed;
                    latents.first_imputed[v][i].get_or_insert(epoch);
                    summary.imputed += 1;
                }
            }
        }
    }
    summary.deferred.retain(|&(i, v)| latents.status[v][i] == EntryStatus::Missing);
    Ok(summary)
}
